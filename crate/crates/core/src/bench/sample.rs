use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, LabelRecord, WorkerKind};

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the random substream used for one instance in one trial. It
/// depends only on the trial seed and the instance ID.
pub fn instance_seed(seed: u64, instance_id: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(instance_id.as_bytes())))
}

/// Keeps at most `n` crowd labels per instance, drawn uniformly without
/// replacement. LLM records pass through untouched. Records keep their
/// original relative order, and the draw for an instance depends only on
/// `seed`, the instance ID and the IDs of its crowd workers.
pub fn few_crowd_sample(d: &Dataset, n: usize, seed: u64) -> Vec<LabelRecord> {
    let llm: HashSet<&str> =
        d.workers.iter().filter(|w| w.kind == WorkerKind::Llm).map(|w| w.id.as_str()).collect();
    let crowd_of = |r: &LabelRecord| !llm.contains(r.worker_id.as_str());
    let mut keep = vec![false; d.records.len()];
    let mut by_instance: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, r) in d.records.iter().enumerate() {
        if crowd_of(r) {
            by_instance.entry(r.instance_id.as_str()).or_default().push(pos);
        } else {
            keep[pos] = true;
        }
    }
    for (instance, mut positions) in by_instance {
        if positions.len() <= n {
            positions.iter().for_each(|&p| keep[p] = true);
            continue;
        }
        // Draw over workers in ID order so the sample ignores record order.
        positions.sort_by(|&x, &y| d.records[x].worker_id.cmp(&d.records[y].worker_id));
        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed, instance));
        for k in index::sample(&mut rng, positions.len(), n) {
            keep[positions[k]] = true;
        }
    }
    d.records.iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r.clone()).collect()
}
