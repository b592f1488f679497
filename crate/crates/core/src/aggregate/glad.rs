use std::collections::BTreeMap;

use super::{max_abs_diff, normalize_log, AggregateError, AggregationResult, AggregatorOptions, Encoded, WorkerParams};
use crate::dataset::Dataset;

/// Mean of the Gaussian priors on ability and on log-inverse-difficulty.
const PRIOR_MEAN: f64 = 1.0;
/// Variance of both Gaussian priors.
const PRIOR_VAR: f64 = 1.0;
const MIN_STEP: f64 = 1e-14;
/// Relative size of objective differences treated as rounding noise.
const ROUNDING: f64 = 1e-13;

/// log σ(x)
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_prior(x: f64) -> f64 {
    -(x - PRIOR_MEAN).powi(2) / (2.0 * PRIOR_VAR)
}

/// The GLAD model over one dataset.
///
/// A worker with ability `a` labels an instance with inverse difficulty
/// `beta = exp(b)` correctly with probability `σ(a·beta)`; the remaining
/// mass is spread uniformly over the other K−1 classes. The class prior is
/// uniform. Instance-indexed slices cover only instances with at least one
/// usable label, in [`GladModel::instance_ids`] order.
#[derive(Debug, Clone)]
pub struct GladModel {
    enc: Encoded,
    log_wrong: f64,
    log_class_prior: f64,
}

impl GladModel {
    pub fn new(d: &Dataset) -> Self {
        let enc = Encoded::new(d);
        let k = enc.num_classes() as f64;
        GladModel { enc, log_wrong: (k - 1.0).ln(), log_class_prior: -k.ln() }
    }

    pub fn num_workers(&self) -> usize {
        self.enc.worker_ids.len()
    }

    pub fn num_instances(&self) -> usize {
        self.enc.instance_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.enc.num_classes()
    }

    pub fn worker_ids(&self) -> &[String] {
        &self.enc.worker_ids
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.enc.instance_ids
    }

    fn log_priors(ability: &[f64], log_beta: &[f64]) -> f64 {
        ability.iter().chain(log_beta).map(|&x| log_prior(x)).sum()
    }

    /// Expected complete-data log-posterior under `posteriors`, up to a
    /// constant. This is what the M-step climbs.
    pub fn m_step_objective(&self, ability: &[f64], log_beta: &[f64], posteriors: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (j, obs) in self.enc.by_instance.iter().enumerate() {
            let beta = log_beta[j].exp();
            for &(i, l) in obs {
                let q = posteriors[j][l];
                let x = ability[i] * beta;
                total += q * log_sigmoid(x) + (1.0 - q) * (log_sigmoid(-x) - self.log_wrong);
            }
        }
        total + Self::log_priors(ability, log_beta)
    }

    /// Gradient of [`GladModel::m_step_objective`] with respect to ability
    /// and log-inverse-difficulty.
    pub fn m_step_gradient(&self, ability: &[f64], log_beta: &[f64], posteriors: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut g_ability: Vec<f64> = ability.iter().map(|a| -(a - PRIOR_MEAN) / PRIOR_VAR).collect();
        let mut g_log_beta: Vec<f64> = log_beta.iter().map(|b| -(b - PRIOR_MEAN) / PRIOR_VAR).collect();
        for (j, obs) in self.enc.by_instance.iter().enumerate() {
            let beta = log_beta[j].exp();
            for &(i, l) in obs {
                let r = posteriors[j][l] - sigmoid(ability[i] * beta);
                g_ability[i] += r * beta;
                g_log_beta[j] += r * ability[i] * beta;
            }
        }
        (g_ability, g_log_beta)
    }

    /// Posterior class probabilities given parameters, written into `out`.
    /// Returns the observed-data log-posterior (log-likelihood plus
    /// parameter priors, up to a constant).
    pub fn e_step(&self, ability: &[f64], log_beta: &[f64], out: &mut [Vec<f64>]) -> f64 {
        let k = self.num_classes();
        let mut scores = vec![0.0; k];
        let mut loglik = 0.0;
        for (j, obs) in self.enc.by_instance.iter().enumerate() {
            let beta = log_beta[j].exp();
            scores.iter_mut().for_each(|s| *s = self.log_class_prior);
            for &(i, l) in obs {
                let x = ability[i] * beta;
                let right = log_sigmoid(x);
                let wrong = log_sigmoid(-x) - self.log_wrong;
                for (c, s) in scores.iter_mut().enumerate() {
                    *s += if c == l { right } else { wrong };
                }
            }
            loglik += normalize_log(&scores, &mut out[j]);
        }
        loglik + Self::log_priors(ability, log_beta)
    }

    /// Observed-data log-posterior of the parameters.
    pub fn log_posterior(&self, ability: &[f64], log_beta: &[f64]) -> f64 {
        let mut scratch = vec![vec![0.0; self.num_classes()]; self.num_instances()];
        self.e_step(ability, log_beta, &mut scratch)
    }

    /// Gradient ascent with step halving; every accepted step leaves the
    /// objective no lower than before, up to rounding of the objective itself.
    fn m_step(&self, ability: &mut [f64], log_beta: &mut [f64], posteriors: &[Vec<f64>], opts: &AggregatorOptions) {
        let mut current = self.m_step_objective(ability, log_beta, posteriors);
        let mut cand_a = ability.to_vec();
        let mut cand_b = log_beta.to_vec();
        for _ in 0..opts.glad_inner_iters {
            let (ga, gb) = self.m_step_gradient(ability, log_beta, posteriors);
            let mut step = opts.glad_step;
            let mut moved = false;
            while step >= MIN_STEP {
                for ((c, x), g) in cand_a.iter_mut().zip(ability.iter()).zip(&ga) {
                    *c = x + step * g;
                }
                for ((c, x), g) in cand_b.iter_mut().zip(log_beta.iter()).zip(&gb) {
                    *c = x + step * g;
                }
                let value = self.m_step_objective(&cand_a, &cand_b, posteriors);
                // Near the optimum the gain drops below what the objective
                // can resolve; there the slope at the candidate decides.
                let unresolved = (value - current).abs() <= ROUNDING * current.abs().max(1.0);
                let uphill = unresolved && {
                    let (ca, cb) = self.m_step_gradient(&cand_a, &cand_b, posteriors);
                    let slope: f64 =
                        ca.iter().zip(&ga).chain(cb.iter().zip(&gb)).map(|(x, y)| x * y).sum();
                    slope >= 0.0
                };
                if value > current || uphill {
                    ability.copy_from_slice(&cand_a);
                    log_beta.copy_from_slice(&cand_b);
                    current = value;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
    }
}

/// GLAD EM: posteriors start from majority vote, ability from 1 and
/// log-inverse-difficulty from 0.
pub fn glad(d: &Dataset, opts: &AggregatorOptions) -> Result<AggregationResult, AggregateError> {
    opts.validate()?;
    let model = GladModel::new(d);
    let mut ability = vec![1.0; model.num_workers()];
    let mut log_beta = vec![0.0; model.num_instances()];
    let mut post = model.enc.vote_shares();
    let mut next = post.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        model.m_step(&mut ability, &mut log_beta, &post, opts);
        trace.push(model.e_step(&ability, &log_beta, &mut next));
        let delta = max_abs_diff(&post, &next);
        std::mem::swap(&mut post, &mut next);
        if delta < opts.tolerance {
            converged = true;
            break;
        }
    }

    let enc = &model.enc;
    let worker_params = WorkerParams::Glad {
        ability: enc.worker_ids.iter().cloned().zip(ability.iter().copied()).collect(),
        beta: enc.instance_ids.iter().cloned().zip(log_beta.iter().map(|b| b.exp())).collect::<BTreeMap<_, _>>(),
        difficulty: enc.instance_ids.iter().cloned().zip(log_beta.iter().map(|b| (-b).exp())).collect(),
    };
    Ok(enc.finish(opts, post, worker_params, trace, converged, iterations))
}
