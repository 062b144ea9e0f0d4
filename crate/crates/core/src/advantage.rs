//! Group-relative advantage standardization.
//!
//! Proposer batches are grouped by hop count; solver batches by question.
//! Both use the population standard deviation plus a positive stabilizer.

use std::collections::HashMap;
use std::hash::Hash;

pub const DEFAULT_DELTA0: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GroupedRewards<K> {
    pub entries: Vec<(f64, K)>,
    pub delta0: f64,
}

impl<K> GroupedRewards<K> {
    pub fn new(delta0: f64) -> Self {
        assert!(delta0 > 0.0, "delta0 must be positive");
        Self {
            entries: Vec::new(),
            delta0,
        }
    }

    pub fn push(&mut self, reward: f64, key: K) {
        self.entries.push((reward, key));
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes each entry against the other members of its group. Output
/// order matches input order. Singleton and constant groups get exactly 0.
pub fn hop_grouped_advantages<K: Eq + Hash>(batch: &GroupedRewards<K>) -> Vec<f64> {
    let mut members: HashMap<&K, Vec<usize>> = HashMap::new();
    for (i, (_, key)) in batch.entries.iter().enumerate() {
        members.entry(key).or_default().push(i);
    }
    let mut out = vec![0.0; batch.entries.len()];
    for idx in members.values() {
        let rewards: Vec<f64> = idx.iter().map(|&i| batch.entries[i].0).collect();
        for (slot, a) in idx.iter().zip(group_advantages(&rewards, batch.delta0)) {
            out[*slot] = a;
        }
    }
    out
}

pub fn group_advantages(rewards: &[f64], delta0: f64) -> Vec<f64> {
    if rewards.len() < 2 || rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let (mean, std) = mean_std(rewards);
    rewards.iter().map(|r| (r - mean) / (std + delta0)).collect()
}
