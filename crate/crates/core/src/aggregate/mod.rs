//! Truth inference: majority vote, Dawid-Skene and GLAD.
//!
//! All three aggregators share the same input encoding ([`Encoded`]):
//! abstentions are dropped, labels are mapped onto class indices in
//! canonical label-space order, and observations are sorted by
//! (instance, worker) so results do not depend on record order.

mod ds;
mod glad;
mod mv;

pub use ds::dawid_skene;
pub use glad::{glad, GladModel};
pub use mv::majority_vote;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("invalid aggregator options: {0}")]
    InvalidOptions(String),
    #[error("unknown aggregation method `{0}` (expected mv, ds or glad)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mv,
    Ds,
    Glad,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mv, Method::Ds, Method::Glad];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mv => "mv",
            Method::Ds => "ds",
            Method::Glad => "glad",
        }
    }

    /// Column header used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Mv => "MV",
            Method::Ds => "DS",
            Method::Glad => "GLAD",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = AggregateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mv" => Ok(Method::Mv),
            "ds" => Ok(Method::Ds),
            "glad" => Ok(Method::Glad),
            _ => Err(AggregateError::UnknownMethod(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorOptions {
    pub method: Method,
    pub max_iterations: usize,
    /// Stop once no posterior entry moves by more than this between iterations.
    pub tolerance: f64,
    /// Laplace pseudo-count added to Dawid-Skene prior and confusion counts.
    pub smoothing: f64,
    /// Initial step of GLAD's gradient M-step (halved until the objective improves).
    pub glad_step: f64,
    pub glad_inner_iters: usize,
    /// Reserved for randomized tie-breaking; ties are currently broken by label order.
    pub seed: u64,
}

impl Default for AggregatorOptions {
    fn default() -> Self {
        AggregatorOptions {
            method: Method::Mv,
            max_iterations: 100,
            tolerance: 1e-6,
            smoothing: 0.01,
            glad_step: 0.01,
            glad_inner_iters: 25,
            seed: 0,
        }
    }
}

impl AggregatorOptions {
    pub fn new(method: Method) -> Self {
        AggregatorOptions { method, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), AggregateError> {
        let bad = |m: &str| Err(AggregateError::InvalidOptions(m.to_string()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return bad("tolerance must be positive");
        }
        if !self.smoothing.is_finite() || self.smoothing < 0.0 {
            return bad("smoothing must be a finite non-negative number");
        }
        if !self.glad_step.is_finite() || self.glad_step <= 0.0 {
            return bad("glad_step must be positive");
        }
        if self.glad_inner_iters < 1 {
            return bad("glad_inner_iters must be at least 1");
        }
        Ok(())
    }
}

/// Per-worker parameters learned by a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum WorkerParams {
    Mv,
    Ds {
        /// Class priors, indexed like the posterior vectors.
        priors: Vec<f64>,
        /// Worker ID → confusion matrix; row = true class, column = reported class.
        confusion: BTreeMap<String, Vec<Vec<f64>>>,
    },
    Glad {
        ability: BTreeMap<String, f64>,
        /// β per instance (always positive).
        beta: BTreeMap<String, f64>,
        /// 1/β per instance.
        difficulty: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub method: Method,
    pub options: AggregatorOptions,
    /// Axis of every posterior vector: non-abstain labels in canonical order.
    pub classes: Vec<String>,
    pub estimates: BTreeMap<String, String>,
    pub posteriors: BTreeMap<String, Vec<f64>>,
    pub worker_params: WorkerParams,
    /// Objective value after each iteration (log-likelihood for DS, log-posterior for GLAD).
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Instances without a single non-abstain label.
    pub unresolved: Vec<String>,
    pub abstentions_removed: usize,
}

/// Runs the aggregator selected by `opts.method`.
pub fn aggregate(d: &Dataset, opts: &AggregatorOptions) -> Result<AggregationResult, AggregateError> {
    match opts.method {
        Method::Mv => majority_vote(d, opts),
        Method::Ds => dawid_skene(d, opts),
        Method::Glad => glad(d, opts),
    }
}

/// Index-based view of a dataset's usable labels.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    pub classes: Vec<String>,
    pub worker_ids: Vec<String>,
    /// IDs of instances with at least one usable label, in dataset order.
    pub instance_ids: Vec<String>,
    pub unresolved: Vec<String>,
    /// (worker, class) pairs per active instance, sorted by worker.
    pub by_instance: Vec<Vec<(usize, usize)>>,
    /// (instance, class) pairs per worker, sorted by instance.
    pub by_worker: Vec<Vec<(usize, usize)>>,
    pub abstentions_removed: usize,
}

impl Encoded {
    pub fn new(d: &Dataset) -> Self {
        let classes: Vec<String> = d.label_space.classes().into_iter().map(str::to_string).collect();
        let class_of: HashMap<&str, usize> = classes.iter().enumerate().map(|(k, c)| (c.as_str(), k)).collect();
        // Sorting by ID makes every float reduction independent of record order.
        let mut worker_ids: Vec<String> = d.workers.iter().map(|w| w.id.clone()).collect();
        worker_ids.sort_unstable();
        let worker_of: HashMap<&str, usize> = worker_ids.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let mut instances: Vec<&str> = d.instances.iter().map(|inst| inst.id.as_str()).collect();
        instances.sort_unstable();
        let instance_of: HashMap<&str, usize> = instances.iter().enumerate().map(|(j, id)| (*id, j)).collect();

        let mut per_instance: Vec<Vec<(usize, usize)>> = vec![Vec::new(); instances.len()];
        let mut abstentions_removed = 0;
        for r in &d.records {
            match class_of.get(r.label.as_str()) {
                Some(&k) => per_instance[instance_of[r.instance_id.as_str()]].push((worker_of[r.worker_id.as_str()], k)),
                None => abstentions_removed += 1,
            }
        }

        let mut instance_ids = Vec::new();
        let mut unresolved = Vec::new();
        let mut by_instance = Vec::new();
        for (id, mut obs) in instances.iter().zip(per_instance) {
            if obs.is_empty() {
                unresolved.push(id.to_string());
            } else {
                obs.sort_unstable();
                instance_ids.push(id.to_string());
                by_instance.push(obs);
            }
        }
        let mut by_worker = vec![Vec::new(); worker_ids.len()];
        for (j, obs) in by_instance.iter().enumerate() {
            for &(i, k) in obs {
                by_worker[i].push((j, k));
            }
        }
        Encoded { classes, worker_ids, instance_ids, unresolved, by_instance, by_worker, abstentions_removed }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Normalized label counts per active instance.
    pub fn vote_shares(&self) -> Vec<Vec<f64>> {
        let k = self.num_classes();
        self.by_instance
            .iter()
            .map(|obs| {
                let mut counts = vec![0.0; k];
                for &(_, c) in obs {
                    counts[c] += 1.0;
                }
                let total = obs.len() as f64;
                counts.iter_mut().for_each(|c| *c /= total);
                counts
            })
            .collect()
    }

    pub(crate) fn finish(
        &self,
        opts: &AggregatorOptions,
        posteriors: Vec<Vec<f64>>,
        worker_params: WorkerParams,
        trace: Vec<f64>,
        converged: bool,
        iterations: usize,
    ) -> AggregationResult {
        let mut estimates = BTreeMap::new();
        let mut post_map = BTreeMap::new();
        for (id, p) in self.instance_ids.iter().zip(posteriors) {
            estimates.insert(id.clone(), self.classes[argmax_first(&p)].clone());
            post_map.insert(id.clone(), p);
        }
        AggregationResult {
            method: opts.method,
            options: opts.clone(),
            classes: self.classes.clone(),
            estimates,
            posteriors: post_map,
            worker_params,
            trace,
            converged,
            iterations,
            unresolved: self.unresolved.clone(),
            abstentions_removed: self.abstentions_removed,
        }
    }
}

/// Index of the largest entry; the earliest index wins ties.
pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Numerically stable log(Σ exp(v)).
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Turns log-scores into a normalized probability vector; returns the normalizer.
pub(crate) fn normalize_log(scores: &[f64], out: &mut [f64]) -> f64 {
    let z = log_sum_exp(scores);
    if z == f64::NEG_INFINITY {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|p| *p = u);
        return z;
    }
    let mut total = 0.0;
    for (p, s) in out.iter_mut().zip(scores) {
        *p = (s - z).exp();
        total += *p;
    }
    out.iter_mut().for_each(|p| *p /= total);
    z
}

pub(crate) fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
