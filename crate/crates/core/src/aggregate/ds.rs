use std::collections::BTreeMap;

use super::{max_abs_diff, normalize_log, AggregateError, AggregationResult, AggregatorOptions, Encoded, WorkerParams};
use crate::dataset::Dataset;

/// Class priors and one confusion matrix per worker.
struct Params {
    log_prior: Vec<f64>,
    /// `log_confusion[i][true_class * k + reported_class]`
    log_confusion: Vec<Vec<f64>>,
}

fn m_step(enc: &Encoded, post: &[Vec<f64>], smoothing: f64) -> Params {
    let k = enc.num_classes();
    let m = post.len() as f64;

    let mut prior = vec![smoothing; k];
    for p in post {
        for (acc, x) in prior.iter_mut().zip(p) {
            *acc += x;
        }
    }
    let prior_total = m + k as f64 * smoothing;
    let log_prior = if prior_total > 0.0 {
        prior.iter().map(|c| (c / prior_total).ln()).collect()
    } else {
        vec![-(k as f64).ln(); k]
    };

    let log_confusion = enc
        .by_worker
        .iter()
        .map(|obs| {
            let mut counts = vec![smoothing; k * k];
            for &(j, reported) in obs {
                for t in 0..k {
                    counts[t * k + reported] += post[j][t];
                }
            }
            for t in 0..k {
                let row = &mut counts[t * k..(t + 1) * k];
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter_mut().for_each(|c| *c = (*c / total).ln());
                } else {
                    // No evidence about this worker under class t.
                    row.iter_mut().for_each(|c| *c = -(k as f64).ln());
                }
            }
            counts
        })
        .collect();
    Params { log_prior, log_confusion }
}

/// E-step. Writes new posteriors into `post` and returns the smoothed
/// log-likelihood of `params`: the observed-data log-likelihood plus the
/// log-density of the Dirichlet pseudo-counts. With zero smoothing this is
/// the plain log-likelihood.
fn e_step(enc: &Encoded, params: &Params, smoothing: f64, post: &mut [Vec<f64>]) -> f64 {
    let k = enc.num_classes();
    let mut scores = vec![0.0; k];
    let mut objective = 0.0;
    for (obs, p) in enc.by_instance.iter().zip(post.iter_mut()) {
        scores.copy_from_slice(&params.log_prior);
        for &(i, reported) in obs {
            let conf = &params.log_confusion[i];
            for (t, s) in scores.iter_mut().enumerate() {
                *s += conf[t * k + reported];
            }
        }
        objective += normalize_log(&scores, p);
    }
    if smoothing > 0.0 {
        let prior_term: f64 = params.log_prior.iter().sum();
        let conf_term: f64 = params.log_confusion.iter().flatten().sum();
        objective += smoothing * (prior_term + conf_term);
    }
    objective
}

/// Dawid-Skene EM over per-worker confusion matrices, initialized from
/// majority-vote posteriors.
pub fn dawid_skene(d: &Dataset, opts: &AggregatorOptions) -> Result<AggregationResult, AggregateError> {
    opts.validate()?;
    let enc = Encoded::new(d);
    let k = enc.num_classes();
    let mut post = enc.vote_shares();
    let mut next = post.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut params = m_step(&enc, &post, opts.smoothing);

    while iterations < opts.max_iterations {
        iterations += 1;
        params = m_step(&enc, &post, opts.smoothing);
        trace.push(e_step(&enc, &params, opts.smoothing, &mut next));
        let delta = max_abs_diff(&post, &next);
        std::mem::swap(&mut post, &mut next);
        if delta < opts.tolerance {
            converged = true;
            break;
        }
    }

    let confusion: BTreeMap<String, Vec<Vec<f64>>> = enc
        .worker_ids
        .iter()
        .zip(&params.log_confusion)
        .map(|(id, lc)| (id.clone(), lc.chunks(k).map(|row| row.iter().map(|x| x.exp()).collect()).collect()))
        .collect();
    let worker_params = WorkerParams::Ds { priors: params.log_prior.iter().map(|x| x.exp()).collect(), confusion };
    Ok(enc.finish(opts, post, worker_params, trace, converged, iterations))
}
