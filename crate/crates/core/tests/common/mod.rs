//! Reference implementations written directly from the model definitions.
//! They work on raw (instance, worker, label) string triples, use plain
//! probability products instead of log-space, and optimize to convergence,
//! so they share no code path with the library.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use agglab::dataset::{Dataset, LabelRecord, LabelSpace};
use proptest::prelude::*;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).join("manifest.json")
}

/// Labels per instance as (worker, label) string pairs; abstentions already removed.
pub struct Triples {
    pub classes: Vec<String>,
    pub items: BTreeMap<String, Vec<(String, String)>>,
}

impl Triples {
    pub fn new(classes: &[&str], triples: &[(String, String, String)]) -> Self {
        let mut items: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        for (i, w, l) in triples {
            if classes.contains(&l.as_str()) {
                items.entry(i.clone()).or_default().push((w.clone(), l.clone()));
            }
        }
        Triples { classes: classes.iter().map(|c| c.to_string()).collect(), items }
    }

    pub fn workers(&self) -> BTreeSet<String> {
        self.items.values().flatten().map(|(w, _)| w.clone()).collect()
    }
}

/// Count-and-argmax with the earliest class winning ties.
pub fn mv_oracle(t: &Triples) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (item, labels) in &t.items {
        let mut best: Option<(&String, usize)> = None;
        for c in &t.classes {
            let n = labels.iter().filter(|(_, l)| l == c).count();
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((c, n));
            }
        }
        out.insert(item.clone(), best.unwrap().0.clone());
    }
    out
}

fn vote_shares(t: &Triples) -> BTreeMap<String, Vec<f64>> {
    t.items
        .iter()
        .map(|(item, labels)| {
            let v = t
                .classes
                .iter()
                .map(|c| labels.iter().filter(|(_, l)| l == c).count() as f64 / labels.len() as f64)
                .collect();
            (item.clone(), v)
        })
        .collect()
}

fn max_change(a: &BTreeMap<String, Vec<f64>>, b: &BTreeMap<String, Vec<f64>>) -> f64 {
    let mut m: f64 = 0.0;
    for (k, v) in a {
        for (x, y) in v.iter().zip(&b[k]) {
            m = m.max((x - y).abs());
        }
    }
    m
}

/// Dawid-Skene EM with Laplace pseudo-count `s`, started from vote shares.
/// Returns posteriors per instance.
pub fn ds_oracle(t: &Triples, s: f64, max_iter: usize) -> BTreeMap<String, Vec<f64>> {
    let k = t.classes.len();
    let idx = |l: &str| t.classes.iter().position(|c| c == l).unwrap();
    let mut post = vote_shares(t);
    for _ in 0..max_iter {
        // priors
        let mut prior = vec![0.0; k];
        for c in 0..k {
            let mass: f64 = post.values().map(|p| p[c]).sum();
            prior[c] = (mass + s) / (post.len() as f64 + k as f64 * s);
        }
        // confusion matrices
        let mut conf: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        for w in t.workers() {
            let mut m = vec![vec![s; k]; k];
            for (item, labels) in &t.items {
                for (ww, l) in labels {
                    if *ww == w {
                        for c in 0..k {
                            m[c][idx(l)] += post[item][c];
                        }
                    }
                }
            }
            for row in m.iter_mut() {
                let total: f64 = row.iter().sum();
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
            conf.insert(w, m);
        }
        // posteriors
        let mut next = BTreeMap::new();
        for (item, labels) in &t.items {
            let mut p: Vec<f64> = (0..k)
                .map(|c| prior[c] * labels.iter().map(|(w, l)| conf[w][c][idx(l)]).product::<f64>())
                .collect();
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= z);
            next.insert(item.clone(), p);
        }
        let delta = max_change(&post, &next);
        post = next;
        if delta < 1e-15 {
            break;
        }
    }
    post
}

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// P(worker reports `l` | true class `c`) under GLAD.
fn glad_lik(a: f64, b: f64, k: usize, same: bool) -> f64 {
    let p = sigma(a * b.exp());
    if same {
        p
    } else {
        (1.0 - p) / (k as f64 - 1.0)
    }
}

fn gauss(x: f64) -> f64 {
    -(x - 1.0) * (x - 1.0) / 2.0
}

/// Maximizes Σ_items Σ_labels weight(item, label) · log P(label | ...) plus
/// N(1,1) priors over ability and log-beta with damped Newton iterations on
/// the full Hessian, until the gradient vanishes.
fn glad_maximize(
    t: &Triples,
    weights: &dyn Fn(&str, &str) -> f64,
    ability: &mut BTreeMap<String, f64>,
    log_beta: &mut BTreeMap<String, f64>,
) {
    let k = t.classes.len();
    let workers: Vec<String> = ability.keys().cloned().collect();
    let items: Vec<String> = log_beta.keys().cloned().collect();
    let nw = workers.len();
    let dim = nw + items.len();
    // (worker index, item index, weight)
    let mut obs = Vec::new();
    for (jj, item) in items.iter().enumerate() {
        for (w, l) in &t.items[item] {
            obs.push((workers.iter().position(|x| x == w).unwrap(), jj, weights(item, l)));
        }
    }
    let mut x: Vec<f64> = workers.iter().map(|w| ability[w]).chain(items.iter().map(|j| log_beta[j])).collect();
    let objective = |x: &[f64]| -> f64 {
        let mut total: f64 = x.iter().map(|&v| gauss(v)).sum();
        for &(i, j, q) in &obs {
            total += q * glad_lik(x[i], x[nw + j], k, true).ln() + (1.0 - q) * glad_lik(x[i], x[nw + j], k, false).ln();
        }
        total
    };
    for _ in 0..500 {
        let mut g: Vec<f64> = x.iter().map(|&v| -(v - 1.0)).collect();
        let mut h = vec![vec![0.0; dim]; dim];
        for (d, row) in h.iter_mut().enumerate() {
            row[d] = -1.0;
        }
        for &(i, j, q) in &obs {
            let (a, beta) = (x[i], x[nw + j].exp());
            let s = sigma(a * beta);
            let r = q - s;
            let c = s * (1.0 - s);
            let bj = nw + j;
            g[i] += r * beta;
            g[bj] += r * a * beta;
            h[i][i] -= c * beta * beta;
            h[bj][bj] += -c * (a * beta) * (a * beta) + r * a * beta;
            let cross = -c * a * beta * beta + r * beta;
            h[i][bj] += cross;
            h[bj][i] += cross;
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-14 {
            break;
        }
        // Newton direction: solve (-H) d = g; fall back to the gradient.
        let dir = solve(h.iter().map(|row| row.iter().map(|v| -v).collect()).collect(), g.clone())
            .filter(|d| d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() > 0.0)
            .unwrap_or_else(|| g.clone());
        if norm < 1e-6 {
            for (xv, dv) in x.iter_mut().zip(&dir) {
                *xv += dv;
            }
            continue;
        }
        let f0 = objective(&x);
        let mut step = 1.0;
        loop {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            if objective(&cand) >= f0 || step < 1e-12 {
                x = cand;
                break;
            }
            step *= 0.5;
        }
    }
    for (n, w) in workers.iter().enumerate() {
        ability.insert(w.clone(), x[n]);
    }
    for (n, j) in items.iter().enumerate() {
        log_beta.insert(j.clone(), x[nw + n]);
    }
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

pub struct GladOracle {
    pub posteriors: BTreeMap<String, Vec<f64>>,
    pub log_posterior_trace: Vec<f64>,
}

fn glad_e_step(
    t: &Triples,
    ability: &BTreeMap<String, f64>,
    log_beta: &BTreeMap<String, f64>,
) -> (BTreeMap<String, Vec<f64>>, f64) {
    let k = t.classes.len();
    let mut post = BTreeMap::new();
    let mut loglik = 0.0;
    for (item, labels) in &t.items {
        let mut p: Vec<f64> = t
            .classes
            .iter()
            .map(|c| {
                (1.0 / k as f64)
                    * labels.iter().map(|(w, l)| glad_lik(ability[w], log_beta[item], k, l == c)).product::<f64>()
            })
            .collect();
        let z: f64 = p.iter().sum();
        loglik += z.ln();
        p.iter_mut().for_each(|x| *x /= z);
        post.insert(item.clone(), p);
    }
    let prior = ability.values().map(|&x| gauss(x)).sum::<f64>() + log_beta.values().map(|&x| gauss(x)).sum::<f64>();
    (post, loglik + prior)
}

/// GLAD EM with an exact (to gradient norm 1e-13) M-step, started from vote
/// shares, ability 1 and log-beta 0.
pub fn glad_oracle(t: &Triples, max_iter: usize) -> GladOracle {
    let mut ability: BTreeMap<String, f64> = t.workers().into_iter().map(|w| (w, 1.0)).collect();
    let mut log_beta: BTreeMap<String, f64> = t.items.keys().map(|j| (j.clone(), 0.0)).collect();
    let mut post = vote_shares(t);
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let snapshot = post.clone();
        let classes = t.classes.clone();
        let weights = move |item: &str, l: &str| snapshot[item][classes.iter().position(|c| c == l).unwrap()];
        glad_maximize(t, &weights, &mut ability, &mut log_beta);
        let (next, lp) = glad_e_step(t, &ability, &log_beta);
        trace.push(lp);
        let delta = max_change(&post, &next);
        post = next;
        if delta < 1e-15 {
            break;
        }
    }
    GladOracle { posteriors: post, log_posterior_trace: trace }
}

/// Exhaustive search over every joint label assignment. For each assignment
/// the GLAD parameters are optimized with the assignment held fixed; the
/// assignment with the highest joint log-posterior wins.
pub fn glad_brute_force(t: &Triples) -> BTreeMap<String, String> {
    let k = t.classes.len();
    let items: Vec<&String> = t.items.keys().collect();
    let total = k.pow(items.len() as u32);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for code in 0..total {
        let mut assign = Vec::with_capacity(items.len());
        let mut c = code;
        for _ in 0..items.len() {
            assign.push(c % k);
            c /= k;
        }
        let truth: BTreeMap<String, String> =
            items.iter().zip(&assign).map(|(i, &a)| ((*i).clone(), t.classes[a].clone())).collect();
        let truth_for_weights = truth.clone();
        let weights = move |item: &str, l: &str| if truth_for_weights[item] == l { 1.0 } else { 0.0 };
        let mut ability: BTreeMap<String, f64> = t.workers().into_iter().map(|w| (w, 1.0)).collect();
        let mut log_beta: BTreeMap<String, f64> = t.items.keys().map(|j| (j.clone(), 0.0)).collect();
        glad_maximize(t, &weights, &mut ability, &mut log_beta);
        let mut score = items.len() as f64 * (1.0 / k as f64).ln();
        for (item, labels) in &t.items {
            for (w, l) in labels {
                score += glad_lik(ability[w], log_beta[item], k, truth[item] == *l).ln();
            }
        }
        score += ability.values().map(|&x| gauss(x)).sum::<f64>() + log_beta.values().map(|&x| gauss(x)).sum::<f64>();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, assign));
        }
    }
    let (_, assign) = best.unwrap();
    items.into_iter().zip(assign).map(|(i, a)| (i.clone(), t.classes[a].clone())).collect()
}

pub fn triples_of(d: &Dataset) -> Triples {
    let raw: Vec<(String, String, String)> =
        d.records.iter().map(|r| (r.instance_id.clone(), r.worker_id.clone(), r.label.clone())).collect();
    Triples::new(&d.label_space.classes(), &raw)
}

/// A random small dataset: up to 6 workers, 10 instances, 4 classes, plus an
/// abstain label. Every cell is unlabeled, a class, or an abstention.
pub fn small_dataset() -> impl Strategy<Value = Dataset> {
    (2usize..=4, 1usize..=6, 1usize..=10).prop_flat_map(|(k, n, m)| {
        proptest::collection::vec(0usize..=k + 1, n * m).prop_map(move |cells| {
            let mut labels: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
            labels.push("skip".into());
            let space = LabelSpace::new(labels.clone(), ["skip"]).unwrap();
            let mut recs = Vec::new();
            for (idx, &cell) in cells.iter().enumerate() {
                let (w, j) = (idx / m, idx % m);
                // value 0 = no label
                if cell > 0 {
                    recs.push(LabelRecord::new(format!("i{j}"), format!("w{w}"), labels[cell - 1].clone()));
                }
            }
            if recs.is_empty() {
                recs.push(LabelRecord::new("i0", "w0", "c0"));
            }
            Dataset::from_records("rand", space, vec![], recs).unwrap()
        })
    })
}

pub fn relabeled(d: &Dataset, shift: usize) -> Dataset {
    let mut recs: Vec<LabelRecord> = d
        .records
        .iter()
        .map(|r| LabelRecord::new(format!("item-{}", r.instance_id), format!("ann-{}", r.worker_id), r.label.clone()))
        .collect();
    let len = recs.len();
    recs.rotate_left(shift % len);
    recs.reverse();
    Dataset::from_records(d.name.clone(), d.label_space.clone(), vec![], recs).unwrap()
}
