//! Annotation data: label spaces, workers, instances, label records, and the
//! [`Dataset`] that ties them together.
//!
//! A dataset is normally materialized from a JSON manifest (see [`load_dataset`])
//! that points at a label-space file, a labels CSV and, optionally, an
//! instances CSV and a gold CSV.

mod io;
mod stats;

pub use io::{
    load_dataset, read_gold_csv, read_label_space, read_labels_csv, read_standardized_tsv, write_dataset, write_labels_csv, Manifest,
};
pub use stats::{dataset_stats, per_worker_accuracy, AccuracySummary, StatsSummary, WorkerAccuracy, WorkerAccuracyReport};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix that marks a worker ID as belonging to an LLM worker.
pub const LLM_WORKER_PREFIX: &str = "llm:";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    Header { path: PathBuf, expected: String, found: String },
    #[error("{path}:{line}: {message}")]
    Row { path: PathBuf, line: u64, message: String },
    #[error("{path}: no records")]
    NoRecords { path: PathBuf },
    #[error("invalid label space: {0}")]
    LabelSpace(String),
    #[error("{0}")]
    Invalid(String),
}

/// The ordered set of candidate labels shared by every instance.
///
/// Canonical order is the order in which labels were declared; it drives
/// tie-breaking in every aggregator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<String>,
    abstain: Vec<String>,
}

impl LabelSpace {
    pub fn new<L, A>(labels: L, abstain_labels: A) -> Result<Self, DatasetError>
    where
        L: IntoIterator,
        L::Item: Into<String>,
        A: IntoIterator,
        A::Item: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(|l| l.into().trim().to_string()).collect();
        let abstain: Vec<String> = abstain_labels.into_iter().map(|l| l.into().trim().to_string()).collect();
        if labels.is_empty() {
            return Err(DatasetError::LabelSpace("no labels declared".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(DatasetError::LabelSpace("empty label".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(DatasetError::LabelSpace(format!("duplicate label `{l}`")));
            }
        }
        for a in &abstain {
            if !seen.contains(a.as_str()) {
                return Err(DatasetError::LabelSpace(format!("abstain label `{a}` is not a declared label")));
            }
        }
        let space = LabelSpace { labels, abstain };
        if space.num_classes() < 2 {
            return Err(DatasetError::LabelSpace(format!(
                "need at least 2 non-abstain labels, found {}",
                space.num_classes()
            )));
        }
        Ok(space)
    }

    /// All labels in canonical order, abstentions included.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn abstain_labels(&self) -> &[String] {
        &self.abstain
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn is_abstain(&self, label: &str) -> bool {
        self.abstain.iter().any(|l| l == label)
    }

    /// Non-abstain labels in canonical order. These are the classes the
    /// aggregators reason about.
    pub fn classes(&self) -> Vec<&str> {
        self.labels.iter().filter(|l| !self.is_abstain(l)).map(String::as_str).collect()
    }

    /// K, the number of non-abstain labels.
    pub fn num_classes(&self) -> usize {
        self.labels.len() - self.abstain.len()
    }

    /// Position of `label` among the non-abstain classes.
    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.labels
            .iter()
            .filter(|l| !self.is_abstain(l))
            .position(|l| l == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerKind {
    Crowd,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Worker {
    pub id: String,
    pub kind: WorkerKind,
    /// For LLM workers, the part of the ID after `llm:` (model and temperature).
    pub profile_tag: Option<String>,
}

impl Worker {
    /// Builds a worker whose kind is inferred from the ID namespace.
    pub fn from_id(id: &str) -> Self {
        match id.strip_prefix(LLM_WORKER_PREFIX) {
            Some(tag) => Worker { id: id.to_string(), kind: WorkerKind::Llm, profile_tag: Some(tag.to_string()) },
            None => Worker { id: id.to_string(), kind: WorkerKind::Crowd, profile_tag: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: Option<String>,
    pub options: Option<Vec<String>>,
    pub gold: Option<String>,
}

impl Instance {
    pub fn new(id: impl Into<String>) -> Self {
        Instance { id: id.into(), text: None, options: None, gold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelRecord {
    pub instance_id: String,
    pub worker_id: String,
    pub label: String,
}

impl LabelRecord {
    pub fn new(instance_id: impl Into<String>, worker_id: impl Into<String>, label: impl Into<String>) -> Self {
        LabelRecord { instance_id: instance_id.into(), worker_id: worker_id.into(), label: label.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub label_space: LabelSpace,
    pub workers: Vec<Worker>,
    pub instances: Vec<Instance>,
    pub records: Vec<LabelRecord>,
}

impl Dataset {
    /// Assembles a dataset from records, deriving workers in first-appearance
    /// order. Instances not listed in `instances` are appended in
    /// first-appearance order. Fails on any invariant violation.
    pub fn from_records(
        name: impl Into<String>,
        label_space: LabelSpace,
        mut instances: Vec<Instance>,
        records: Vec<LabelRecord>,
    ) -> Result<Self, DatasetError> {
        let mut known: HashSet<String> = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if !known.insert(inst.id.clone()) {
                return Err(DatasetError::Invalid(format!("duplicate instance id `{}`", inst.id)));
            }
        }
        let mut workers = Vec::new();
        let mut seen_workers = HashSet::new();
        for r in &records {
            if !known.contains(&r.instance_id) {
                known.insert(r.instance_id.clone());
                instances.push(Instance::new(r.instance_id.clone()));
            }
            if seen_workers.insert(r.worker_id.as_str()) {
                workers.push(Worker::from_id(&r.worker_id));
            }
        }
        let d = Dataset { name: name.into(), label_space, workers, instances, records };
        d.validate()?;
        Ok(d)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut instance_ids = HashSet::new();
        for inst in &self.instances {
            if !instance_ids.insert(inst.id.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate instance id `{}`", inst.id)));
            }
            if let Some(opts) = &inst.options {
                let distinct: HashSet<&String> = opts.iter().collect();
                if distinct.len() != opts.len() {
                    return Err(DatasetError::Invalid(format!("instance `{}` has repeated option text", inst.id)));
                }
            }
            if let Some(g) = &inst.gold {
                if !self.label_space.contains(g) || self.label_space.is_abstain(g) {
                    return Err(DatasetError::Invalid(format!(
                        "gold label `{g}` of instance `{}` is not a non-abstain label",
                        inst.id
                    )));
                }
            }
        }
        let mut worker_ids = HashSet::new();
        for w in &self.workers {
            if !worker_ids.insert(w.id.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate worker id `{}`", w.id)));
            }
        }
        let mut pairs = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !instance_ids.contains(r.instance_id.as_str()) {
                return Err(DatasetError::Invalid(format!("record references unknown instance `{}`", r.instance_id)));
            }
            if !worker_ids.contains(r.worker_id.as_str()) {
                return Err(DatasetError::Invalid(format!("record references unknown worker `{}`", r.worker_id)));
            }
            if !self.label_space.contains(&r.label) {
                return Err(DatasetError::Invalid(format!("label `{}` is not in the label space", r.label)));
            }
            if !pairs.insert((r.instance_id.as_str(), r.worker_id.as_str())) {
                return Err(DatasetError::Invalid(format!(
                    "worker `{}` labeled instance `{}` more than once",
                    r.worker_id, r.instance_id
                )));
            }
        }
        Ok(())
    }

    pub fn worker(&self, id: &str) -> Option<&Worker> {
        self.workers.iter().find(|w| w.id == id)
    }

    /// Y_{*j}: records grouped by instance, in instance order.
    pub fn records_by_instance(&self) -> BTreeMap<&str, Vec<&LabelRecord>> {
        let mut out: BTreeMap<&str, Vec<&LabelRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.instance_id.as_str()).or_default().push(r);
        }
        out
    }

    /// Y_{i*}: records grouped by worker.
    pub fn records_by_worker(&self) -> BTreeMap<&str, Vec<&LabelRecord>> {
        let mut out: BTreeMap<&str, Vec<&LabelRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.worker_id.as_str()).or_default().push(r);
        }
        out
    }

    /// Gold labels of the instances that have one.
    pub fn gold(&self) -> HashMap<String, String> {
        self.instances
            .iter()
            .filter_map(|i| i.gold.as_ref().map(|g| (i.id.clone(), g.clone())))
            .collect()
    }

    pub fn has_gold(&self) -> bool {
        self.instances.iter().any(|i| i.gold.is_some())
    }

    /// A copy of this dataset with a different record set. Workers are
    /// re-derived; instances (with gold and content) are kept.
    pub fn with_records(&self, records: Vec<LabelRecord>) -> Result<Dataset, DatasetError> {
        Dataset::from_records(self.name.clone(), self.label_space.clone(), self.instances.clone(), records)
    }
}

impl fmt::Display for LabelRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.instance_id, self.worker_id, self.label)
    }
}
