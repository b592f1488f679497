use super::{AggregateError, AggregationResult, AggregatorOptions, Encoded, WorkerParams};
use crate::dataset::Dataset;

/// Plurality vote over non-abstain labels. Ties go to the label that comes
/// first in the label space; the posterior is the normalized vote count.
pub fn majority_vote(d: &Dataset, opts: &AggregatorOptions) -> Result<AggregationResult, AggregateError> {
    opts.validate()?;
    let enc = Encoded::new(d);
    let posteriors = enc.vote_shares();
    Ok(enc.finish(opts, posteriors, WorkerParams::Mv, Vec::new(), true, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Method;
    use crate::dataset::{LabelRecord, LabelSpace};

    fn dataset(labels: &[(&str, &str, &str)]) -> Dataset {
        let space = LabelSpace::new(["A", "B", "?"], ["?"]).unwrap();
        let recs = labels.iter().map(|(i, w, l)| LabelRecord::new(*i, *w, *l)).collect();
        Dataset::from_records("t", space, vec![], recs).unwrap()
    }

    #[test]
    fn plurality() {
        let d = dataset(&[("x", "w1", "A"), ("x", "w2", "A"), ("x", "w3", "B")]);
        let r = majority_vote(&d, &AggregatorOptions::new(Method::Mv)).unwrap();
        assert_eq!(r.estimates["x"], "A");
        let p = &r.posteriors["x"];
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn tie_goes_to_canonical_order() {
        let d = dataset(&[("x", "w1", "B"), ("x", "w2", "A")]);
        let r = majority_vote(&d, &AggregatorOptions::new(Method::Mv)).unwrap();
        assert_eq!(r.estimates["x"], "A");
    }

    #[test]
    fn abstain_only_instance_is_unresolved() {
        let d = dataset(&[("x", "w1", "?"), ("y", "w1", "B"), ("y", "w2", "?")]);
        let r = majority_vote(&d, &AggregatorOptions::new(Method::Mv)).unwrap();
        assert_eq!(r.unresolved, vec!["x".to_string()]);
        assert!(!r.estimates.contains_key("x"));
        assert_eq!(r.estimates["y"], "B");
        assert_eq!(r.abstentions_removed, 2);
    }
}
