//! UCB1 bandit state, scoring, batch selection and between-iteration feedback.

use rand::Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use super::SelectorError;

const SOFTMAX_STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub pulls: u64,
    pub reward_sum: f64,
}

impl Arm {
    /// One virtual pull, zero virtual reward.
    pub fn fresh() -> Self {
        Self {
            pulls: 1,
            reward_sum: 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.reward_sum / self.pulls.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub arms: Vec<Arm>,
    pub beta: f64,
}

impl BanditState {
    pub fn new(n_arms: usize, beta: f64) -> Self {
        Self {
            arms: vec![Arm::fresh(); n_arms],
            beta,
        }
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn total_pulls(&self) -> u64 {
        self.arms.iter().map(|a| a.pulls).sum()
    }

    pub fn scores(&self) -> Vec<f64> {
        let n_tot = self.total_pulls();
        self.arms
            .iter()
            .map(|a| ucb_score(a, n_tot, self.beta))
            .collect()
    }

    /// Records one pull of `arm` with reward `r`.
    pub fn record(&mut self, arm: usize, r: f64) {
        let a = &mut self.arms[arm];
        a.pulls += 1;
        a.reward_sum += r;
    }
}

pub fn ucb_score(arm: &Arm, n_tot: u64, beta: f64) -> f64 {
    let n_k = arm.pulls.max(1) as f64;
    let n_tot = n_tot.max(1) as f64;
    arm.reward_sum / n_k + beta * (n_tot.ln() / n_k).sqrt()
}

/// Deterministic argmax of the UCB scores; ties go to the lowest index.
pub fn select_arm(bandit: &BanditState) -> usize {
    let mut best = 0;
    let scores = bandit.scores();
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Arm probabilities used by [`select_batch`].
pub fn batch_probabilities(bandit: &BanditState) -> Vec<f64> {
    let u = bandit.scores();
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let std = (u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return vec![1.0 / n; u.len()];
    }
    let scale = std.max(SOFTMAX_STD_FLOOR);
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = u.iter().map(|x| ((x - max) / scale).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// `n` independent draws from the softmax over UCB scores rescaled by their
/// standard deviation.
pub fn select_batch<R: Rng + ?Sized>(bandit: &BanditState, n: usize, rng: &mut R) -> Vec<usize> {
    let probs = batch_probabilities(bandit);
    let dist = WeightedIndex::new(&probs).expect("softmax weights are positive");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Draws a document from `candidates` (document index, distance to centroid)
/// with weight `distance / (1 + usage)`. Falls back to uniform when every
/// weight is zero. Returns `None` only for an empty candidate list.
pub fn sample_document<R: Rng + ?Sized>(
    candidates: &[(usize, f64)],
    usage: &[u32],
    rng: &mut R,
) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    let weights: Vec<f64> = candidates
        .iter()
        .map(|(d, dist)| dist / (1.0 + usage.get(*d).copied().unwrap_or(0) as f64))
        .collect();
    let pick = match WeightedIndex::new(&weights) {
        Ok(dist) => dist.sample(rng),
        Err(_) => rng.random_range(0..candidates.len()),
    };
    Some(candidates[pick].0)
}

/// Question-length and answer-length bounded quality proxy, discounted by
/// the number of duplicates of the prompt in the batch. Lengths are in
/// characters.
pub fn quality_proxy(question_len: usize, answer_len: usize, duplicates: usize) -> f64 {
    let q_len = if (20..=220).contains(&question_len) { 1.0 } else { 0.65 };
    let q_ans = if (1..=80).contains(&answer_len) { 1.0 } else { 0.55 };
    q_len * q_ans / (duplicates.max(1) as f64).sqrt()
}

/// Selector reward for each `(arm, r_i)` sample, computed against the
/// bandit's current (pre-update) statistics.
pub fn selector_rewards(
    bandit: &BanditState,
    samples: &[(usize, f64)],
    lambda_u: f64,
    epsilon: f64,
) -> Result<Vec<f64>, SelectorError> {
    let n_tot = bandit.total_pulls().max(1) as f64;
    samples
        .iter()
        .map(|&(arm, r)| {
            let a = bandit.arms.get(arm).ok_or(SelectorError::UnknownArm {
                arm,
                arms: bandit.len(),
            })?;
            let diversity = -(a.pulls as f64 / n_tot + epsilon).ln();
            Ok(diversity + lambda_u * (r - a.mean()))
        })
        .collect()
}

/// Applies one feedback round. All rewards are computed from the snapshot
/// taken before the round, and per-arm sums are accumulated in sorted order
/// so the result does not depend on sample order.
pub fn feedback_update(
    bandit: &BanditState,
    samples: &[(usize, f64)],
    lambda_u: f64,
    epsilon: f64,
) -> Result<BanditState, SelectorError> {
    let rewards = selector_rewards(bandit, samples, lambda_u, epsilon)?;
    let mut per_arm: Vec<Vec<f64>> = vec![Vec::new(); bandit.len()];
    for ((arm, _), r) in samples.iter().zip(rewards) {
        per_arm[*arm].push(r);
    }
    let mut next = bandit.clone();
    for (arm, mut rs) in per_arm.into_iter().enumerate() {
        if rs.is_empty() {
            continue;
        }
        rs.sort_by(f64::total_cmp);
        let a = &mut next.arms[arm];
        a.pulls += rs.len() as u64;
        a.reward_sum += rs.iter().sum::<f64>();
    }
    Ok(next)
}

/// Carries bandit statistics across a re-clustering. Each new centroid is
/// attached to its nearest old centroid; an old arm's pulls and reward sum
/// are split evenly across its children (at least one pull each). The last
/// child of each parent absorbs the floating-point remainder so the
/// children's reward sums add back to the parent's exactly.
pub fn inherit_stats(
    old: &BanditState,
    old_centroids: &[Vec<f64>],
    new_centroids: &[Vec<f64>],
) -> BanditState {
    if new_centroids.len() == old_centroids.len() {
        return old.clone();
    }
    let parent: Vec<usize> = new_centroids
        .iter()
        .map(|c| super::kmeans::nearest(c, old_centroids).0)
        .collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); old_centroids.len()];
    for (child, p) in parent.iter().enumerate() {
        children[*p].push(child);
    }
    let mut arms = vec![Arm::fresh(); new_centroids.len()];
    let mut orphans = Vec::new();
    for (p, kids) in children.iter().enumerate() {
        let Some(src) = old.arms.get(p) else { continue };
        let c = kids.len();
        if c == 0 {
            orphans.push(p);
            continue;
        }
        let pulls = (src.pulls / c as u64).max(1);
        let share = src.reward_sum / c as f64;
        let mut acc = 0.0;
        for (j, kid) in kids.iter().enumerate() {
            let s = if j + 1 == c { src.reward_sum - acc } else { share };
            acc += s;
            arms[*kid] = Arm {
                pulls,
                reward_sum: s,
            };
        }
    }
    // an old cluster that no new centroid claims hands its statistics to the
    // new arm nearest to it
    for p in orphans {
        let src = old.arms[p];
        let (heir, _) = super::kmeans::nearest(&old_centroids[p], new_centroids);
        arms[heir].pulls += src.pulls;
        arms[heir].reward_sum += src.reward_sum;
    }
    BanditState {
        arms,
        beta: old.beta,
    }
}
