//! Hybrid crowd + LLM label sets and the multi-trial benchmark runner.

mod report;
mod sample;

pub use report::{emit_report, emit_stats_report, emit_worker_report, ReportFormat};
pub use sample::{few_crowd_sample, instance_seed};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{aggregate, AggregateError, AggregatorOptions, Method};
use crate::dataset::{load_dataset, read_labels_csv, Dataset, DatasetError, LabelRecord, LabelSpace, LLM_WORKER_PREFIX};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("worker id `{0}` appears in more than one label set")]
    WorkerCollision(String),
    #[error("label `{label}` of worker `{worker}` is not in the shared label space")]
    LabelMismatch { worker: String, label: String },
    #[error("gold labels are empty")]
    EmptyGold,
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trial {trial} (seed {seed}) failed: {message}")]
    Trial { trial: usize, seed: u64, message: String },
    #[error("unknown report format `{0}` (expected markdown or tsv)")]
    UnknownFormat(String),
}

/// Namespaces an LLM worker ID under `llm:` unless it already is.
pub fn llm_worker_id(id: &str) -> String {
    if id.starts_with(LLM_WORKER_PREFIX) {
        id.to_string()
    } else {
        format!("{LLM_WORKER_PREFIX}{id}")
    }
}

/// Builds the hybrid label set: every crowd record plus every LLM record,
/// with LLM worker IDs moved into the `llm:` namespace.
///
/// The result has exactly `crowd.len() + Σ llm_sets[k].len()` records.
pub fn merge_label_sets(
    space: &LabelSpace,
    crowd: &[LabelRecord],
    llm_sets: &[Vec<LabelRecord>],
) -> Result<Vec<LabelRecord>, BenchError> {
    let check = |r: &LabelRecord| {
        if space.contains(&r.label) {
            Ok(())
        } else {
            Err(BenchError::LabelMismatch { worker: r.worker_id.clone(), label: r.label.clone() })
        }
    };
    let mut owner: HashMap<String, usize> = HashMap::new();
    let mut merged = Vec::with_capacity(crowd.len() + llm_sets.iter().map(Vec::len).sum::<usize>());
    for r in crowd {
        check(r)?;
        owner.entry(r.worker_id.clone()).or_insert(0);
        merged.push(r.clone());
    }
    for (k, set) in llm_sets.iter().enumerate() {
        for r in set {
            check(r)?;
            let id = llm_worker_id(&r.worker_id);
            match owner.get(&id) {
                Some(&o) if o != k + 1 => return Err(BenchError::WorkerCollision(id)),
                Some(_) => {}
                None => {
                    owner.insert(id.clone(), k + 1);
                }
            }
            merged.push(LabelRecord::new(r.instance_id.clone(), id, r.label.clone()));
        }
    }
    Ok(merged)
}

/// Fraction of gold instances whose estimate equals the gold label. Missing
/// estimates count as wrong.
pub fn accuracy(estimates: &BTreeMap<String, String>, gold: &HashMap<String, String>) -> Result<f64, BenchError> {
    if gold.is_empty() {
        return Err(BenchError::EmptyGold);
    }
    let correct = gold.iter().filter(|(id, g)| estimates.get(*id) == Some(*g)).count();
    Ok(correct as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmLabelSetConfig {
    /// Profile tag, e.g. `chatgpt:0`. Every record in the file is attributed
    /// to worker `llm:<tag>`.
    pub tag: String,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    pub name: String,
    #[serde(default = "yes")]
    pub crowd: bool,
    /// Tags of the LLM label sets to add.
    #[serde(default)]
    pub llm: Vec<String>,
}

fn yes() -> bool {
    true
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Manifest of the crowd dataset (with gold). Relative paths resolve
    /// against the config file's directory.
    pub base_dataset: PathBuf,
    #[serde(default)]
    pub llm_label_sets: Vec<LlmLabelSetConfig>,
    pub mixes: Vec<MixConfig>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Crowd labels kept per instance in each trial; `None` uses all labels.
    #[serde(default)]
    pub few_crowd: Option<usize>,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Options shared by every aggregator run; `method` and `seed` are overridden.
    #[serde(default)]
    pub aggregator: AggregatorOptions,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if self.few_crowd == Some(0) {
            return bad("few_crowd must be at least 1".into());
        }
        if self.mixes.is_empty() {
            return bad("no mixes configured".into());
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        let mut names = HashSet::new();
        for m in &self.mixes {
            if !names.insert(m.name.as_str()) {
                return bad(format!("duplicate mix name `{}`", m.name));
            }
        }
        let mut tags = HashSet::new();
        for s in &self.llm_label_sets {
            if !tags.insert(s.tag.as_str()) {
                return bad(format!("duplicate LLM label set tag `{}`", s.tag));
            }
        }
        for m in &self.mixes {
            if !m.crowd && m.llm.is_empty() {
                return bad(format!("mix `{}` selects no labels", m.name));
            }
            if let Some(t) = m.llm.iter().find(|t| !tags.contains(t.as_str())) {
                return bad(format!("mix `{}` references unknown LLM label set `{t}`", m.name));
            }
        }
        let mut seen_methods = HashSet::new();
        if let Some(m) = self.methods.iter().find(|m| !seen_methods.insert(**m)) {
            return bad(format!("method `{m}` listed twice"));
        }
        self.aggregator.validate()?;
        Ok(())
    }

    /// Number of trials actually run: without few-crowd sampling every
    /// trial would be identical, so there is one.
    pub fn effective_trials(&self) -> usize {
        if self.few_crowd.is_some() {
            self.trials
        } else {
            1
        }
    }
}

/// A loaded, validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    /// Records per LLM label-set tag, already namespaced.
    pub llm_sets: BTreeMap<String, Vec<LabelRecord>>,
}

impl Experiment {
    pub fn load(config_path: &Path) -> Result<Self, BenchError> {
        let raw = fs::read_to_string(config_path)
            .map_err(|source| BenchError::Io { path: config_path.to_path_buf(), source })?;
        let config: ExperimentConfig = serde_json::from_str(&raw)
            .map_err(|e| BenchError::Config(format!("{}: {e}", config_path.display())))?;
        let base = config_path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_config(config, base)
    }

    pub fn from_config(config: ExperimentConfig, base_dir: &Path) -> Result<Self, BenchError> {
        config.validate()?;
        let dataset = load_dataset(&base_dir.join(&config.base_dataset))?;
        if !dataset.has_gold() {
            return Err(BenchError::EmptyGold);
        }
        let mut llm_sets = BTreeMap::new();
        for s in &config.llm_label_sets {
            let worker = llm_worker_id(&s.tag);
            let records = read_labels_csv(&base_dir.join(&s.labels), &dataset.label_space)?
                .into_iter()
                .map(|r| LabelRecord::new(r.instance_id, worker.clone(), r.label))
                .collect();
            llm_sets.insert(s.tag.clone(), records);
        }
        Ok(Experiment { config, dataset, llm_sets })
    }

    pub fn from_parts(
        config: ExperimentConfig,
        dataset: Dataset,
        llm_sets: BTreeMap<String, Vec<LabelRecord>>,
    ) -> Result<Self, BenchError> {
        config.validate()?;
        if !dataset.has_gold() {
            return Err(BenchError::EmptyGold);
        }
        for s in &config.llm_label_sets {
            if !llm_sets.contains_key(&s.tag) {
                return Err(BenchError::Config(format!("missing records for LLM label set `{}`", s.tag)));
            }
        }
        Ok(Experiment { config, dataset, llm_sets })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub dataset: String,
    pub mix: String,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub mix: String,
    pub method: Method,
    pub trials: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single trial.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub trials: Vec<TrialReport>,
    pub summary: Vec<SummaryRow>,
}

fn run_trial(exp: &Experiment, trial: usize) -> Result<Vec<TrialReport>, BenchError> {
    let cfg = &exp.config;
    let seed = cfg.master_seed.wrapping_add(trial as u64);
    let crowd: Vec<LabelRecord> = match cfg.few_crowd {
        Some(n) => few_crowd_sample(&exp.dataset, n, seed),
        None => exp.dataset.records.clone(),
    };
    let gold = exp.dataset.gold();
    let mut out = Vec::with_capacity(cfg.mixes.len() * cfg.methods.len());
    for mix in &cfg.mixes {
        let llm: Vec<Vec<LabelRecord>> = mix.llm.iter().map(|t| exp.llm_sets[t].clone()).collect();
        let crowd_part: &[LabelRecord] = if mix.crowd { &crowd } else { &[] };
        let merged = merge_label_sets(&exp.dataset.label_space, crowd_part, &llm)?;
        let d = exp.dataset.with_records(merged)?;
        for &method in &cfg.methods {
            let opts = AggregatorOptions { method, seed, ..cfg.aggregator.clone() };
            let result = aggregate(&d, &opts)?;
            let unresolved = gold.keys().filter(|id| !result.estimates.contains_key(*id)).count();
            out.push(TrialReport {
                dataset: exp.dataset.name.clone(),
                mix: mix.name.clone(),
                method,
                trial,
                seed,
                accuracy: accuracy(&result.estimates, &gold)?,
                unresolved,
            });
        }
    }
    Ok(out)
}

/// Runs every (trial, mix, method) cell. Trials run in parallel; reports
/// come back ordered by trial, then mix, then method.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentOutcome, BenchError> {
    let trials = exp.config.effective_trials();
    let per_trial: Vec<Vec<TrialReport>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            run_trial(exp, t).map_err(|e| BenchError::Trial {
                trial: t,
                seed: exp.config.master_seed.wrapping_add(t as u64),
                message: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    let trials: Vec<TrialReport> = per_trial.into_iter().flatten().collect();
    let summary = summarize(&trials);
    Ok(ExperimentOutcome { trials, summary })
}

/// Mean and sample standard deviation per (dataset, mix, method), in order
/// of first appearance.
pub fn summarize(trials: &[TrialReport]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, Method)> = Vec::new();
    let mut groups: HashMap<(String, String, Method), Vec<f64>> = HashMap::new();
    for t in trials {
        let key = (t.dataset.clone(), t.mix.clone(), t.method);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(t.accuracy);
    }
    order
        .into_iter()
        .map(|key| {
            let v = &groups[&key];
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow { dataset: key.0, mix: key.1, method: key.2, trials: n, mean, std }
        })
        .collect()
}

/// Serializes trial reports as JSON lines.
pub fn trials_to_jsonl(trials: &[TrialReport]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&serde_json::to_string(t).expect("trial report serializes"));
        out.push('\n');
    }
    out
}

pub fn trials_from_jsonl(text: &str) -> Result<Vec<TrialReport>, BenchError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| BenchError::Config(format!("trials line {}: {e}", n + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> LabelSpace {
        LabelSpace::new(["0", "1", "unsure"], ["unsure"]).unwrap()
    }

    fn recs(worker: &str, labels: &[(&str, &str)]) -> Vec<LabelRecord> {
        labels.iter().map(|(i, l)| LabelRecord::new(*i, worker, *l)).collect()
    }

    #[test]
    fn merge_with_nothing_is_identity() {
        let crowd = recs("w1", &[("a", "0"), ("b", "1")]);
        assert_eq!(merge_label_sets(&space(), &crowd, &[]).unwrap(), crowd);
        assert_eq!(merge_label_sets(&space(), &crowd, &[vec![]]).unwrap(), crowd);
    }

    #[test]
    fn merge_namespaces_and_counts() {
        let crowd = recs("w1", &[("a", "0"), ("b", "1")]);
        let llm = vec![recs("gpt:0", &[("a", "1"), ("b", "unsure")])];
        let merged = merge_label_sets(&space(), &crowd, &llm).unwrap();
        assert_eq!(merged.len(), 4);
        assert_eq!(merged[2].worker_id, "llm:gpt:0");
    }

    #[test]
    fn merge_rejects_shared_llm_worker() {
        let a = recs("llm:m:0", &[("a", "0")]);
        let b = recs("m:0", &[("b", "0")]);
        let err = merge_label_sets(&space(), &[], &[a, b]).unwrap_err();
        assert!(err.to_string().contains("llm:m:0"));
    }

    #[test]
    fn merge_rejects_foreign_label() {
        let a = recs("m", &[("a", "maybe")]);
        assert!(matches!(merge_label_sets(&space(), &[], &[a]), Err(BenchError::LabelMismatch { .. })));
    }

    #[test]
    fn accuracy_counts_missing_as_wrong() {
        let gold: HashMap<String, String> =
            [("a", "0"), ("b", "1"), ("c", "1"), ("d", "0")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut est: BTreeMap<String, String> = gold.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        assert_eq!(accuracy(&est, &gold).unwrap(), 1.0);
        est.insert("a".into(), "1".into());
        assert_eq!(accuracy(&est, &gold).unwrap(), 0.75);
        est.remove("b");
        assert_eq!(accuracy(&est, &gold).unwrap(), 0.5);
        assert!(matches!(accuracy(&est, &HashMap::new()), Err(BenchError::EmptyGold)));
    }

    #[test]
    fn summary_uses_sample_std() {
        let mk = |trial, acc| TrialReport {
            dataset: "d".into(),
            mix: "m".into(),
            method: Method::Mv,
            trial,
            seed: trial as u64,
            accuracy: acc,
            unresolved: 0,
        };
        let s = summarize(&[mk(0, 0.5), mk(1, 0.7), mk(2, 0.9)]);
        assert_eq!(s.len(), 1);
        assert!((s[0].mean - 0.7).abs() < 1e-12);
        assert!((s[0].std - 0.2).abs() < 1e-12);
        let single = summarize(&[mk(0, 0.5)]);
        assert_eq!(single[0].std, 0.0);
    }

    #[test]
    fn config_rejects_duplicate_mix_names() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"base_dataset":"m.json","mixes":[{"name":"A"},{"name":"A"}]}"#,
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(BenchError::Config(m)) if m.contains("duplicate")));
    }

    #[test]
    fn config_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"base_dataset":"m.json","mixes":[{"name":"Crowd Worker Only"}]}"#).unwrap();
        assert_eq!(cfg.methods, Method::ALL.to_vec());
        assert_eq!(cfg.trials, 1);
        assert!(cfg.mixes[0].crowd);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn trials_jsonl_round_trip() {
        let t = vec![TrialReport {
            dataset: "d".into(),
            mix: "Crowd + X(1)".into(),
            method: Method::Glad,
            trial: 3,
            seed: 42,
            accuracy: 0.25,
            unresolved: 1,
        }];
        assert_eq!(trials_from_jsonl(&trials_to_jsonl(&t)).unwrap(), t);
    }
}
