use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, WorkerKind};

/// Size statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub instances: usize,
    pub workers: usize,
    pub records: usize,
    /// Number of non-abstain labels.
    pub classes: usize,
    pub abstain_labels: usize,
    pub avg_labels_per_instance: f64,
    pub avg_labels_per_worker: f64,
}

impl StatsSummary {
    /// `K` as printed in dataset tables, e.g. `2+1` when one abstain label exists.
    pub fn classes_display(&self) -> String {
        if self.abstain_labels == 0 {
            self.classes.to_string()
        } else {
            format!("{}+{}", self.classes, self.abstain_labels)
        }
    }
}

pub fn dataset_stats(d: &Dataset) -> StatsSummary {
    let records = d.records.len();
    let instances = d.instances.len();
    let workers = d.workers.len();
    let ratio = |den: usize| if den == 0 { 0.0 } else { records as f64 / den as f64 };
    StatsSummary {
        instances,
        workers,
        records,
        classes: d.label_space.num_classes(),
        abstain_labels: d.label_space.abstain_labels().len(),
        avg_labels_per_instance: ratio(instances),
        avg_labels_per_worker: ratio(workers),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerAccuracy {
    pub worker_id: String,
    pub kind: WorkerKind,
    pub correct: usize,
    /// Records of this worker on instances that carry a gold label.
    pub covered: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub workers: usize,
}

impl AccuracySummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(AccuracySummary {
            min: v[0],
            max: v[n - 1],
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            workers: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerAccuracyReport {
    /// Keyed by worker ID.
    pub workers: BTreeMap<String, WorkerAccuracy>,
    /// Min/max/mean/median over crowd workers with at least one covered record.
    pub crowd_summary: Option<AccuracySummary>,
    /// Number of records that were scored against gold.
    pub covered_records: usize,
    pub total_records: usize,
}

/// Accuracy of every worker against the gold labels it overlaps with.
///
/// Abstentions count as incorrect unless `exclude_abstain` is set, in which
/// case they are dropped from both numerator and denominator.
pub fn per_worker_accuracy(d: &Dataset, exclude_abstain: bool) -> Result<WorkerAccuracyReport, DatasetError> {
    let gold = d.gold();
    if gold.is_empty() {
        return Err(DatasetError::Invalid(format!("dataset `{}` has no gold labels", d.name)));
    }
    let mut tallies: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut covered_records = 0;
    for r in &d.records {
        let Some(g) = gold.get(&r.instance_id) else { continue };
        if exclude_abstain && d.label_space.is_abstain(&r.label) {
            continue;
        }
        covered_records += 1;
        let t = tallies.entry(r.worker_id.as_str()).or_default();
        t.1 += 1;
        if &r.label == g {
            t.0 += 1;
        }
    }
    let mut workers = BTreeMap::new();
    for w in &d.workers {
        if let Some(&(correct, covered)) = tallies.get(w.id.as_str()) {
            workers.insert(
                w.id.clone(),
                WorkerAccuracy {
                    worker_id: w.id.clone(),
                    kind: w.kind,
                    correct,
                    covered,
                    accuracy: correct as f64 / covered as f64,
                },
            );
        }
    }
    let crowd: Vec<f64> = workers.values().filter(|w| w.kind == WorkerKind::Crowd).map(|w| w.accuracy).collect();
    Ok(WorkerAccuracyReport {
        crowd_summary: AccuracySummary::from_values(&crowd),
        workers,
        covered_records,
        total_records: d.records.len(),
    })
}
