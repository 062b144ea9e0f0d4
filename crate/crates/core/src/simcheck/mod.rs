//! Monte-Carlo checks of the difficulty-reward closed form and the verifier
//! estimator, and a simulated chat backend for end-to-end runs.

pub mod mock;
pub mod server;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{difficulty_reward, phi_argmax, phi_n, verifier_estimate};
use crate::seeds;

pub use mock::{mock_triple, JudgeMode, MockConfig, MockEndpoint, Scenario, SimPolicy};

pub const MIN_TRIALS: usize = 10_000;
/// Trials are split into this many independently seeded shards. The count is
/// fixed so results do not depend on the worker pool size.
pub const SHARDS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("need at least {MIN_TRIALS} trials, got {0}")]
    TooFewTrials(usize),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("need n >= 2 solver trials, got {0}")]
    TrialCount(usize),
    #[error("need m >= 1 verifier samples")]
    NoSamples,
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("unknown judge mode {0:?}")]
    UnknownJudgeMode(String),
}

fn check_prob(p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError::Probability(p))
    }
}

fn shard_sizes(trials: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..SHARDS).map(move |s| (s, trials / SHARDS + usize::from(s < trials % SHARDS)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Row {
    pub p: f64,
    pub empirical: f64,
    pub phi: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<Lemma1Row>,
    pub max_gap: f64,
}

/// Averages the difficulty reward over `trials` draws of k ~ Bin(n, p) for
/// each p and compares against the closed form.
pub fn check_lemma1(p_grid: &[f64], n: usize, trials: usize, seed: u64) -> Result<Lemma1Report, SimError> {
    if trials < MIN_TRIALS {
        return Err(SimError::TooFewTrials(trials));
    }
    if n < 2 {
        return Err(SimError::TrialCount(n));
    }
    let mut rows = Vec::with_capacity(p_grid.len());
    for (pi, &p) in p_grid.iter().enumerate() {
        check_prob(p)?;
        let bin = Binomial::new(n as u64, p).expect("validated parameters");
        let sums: Vec<f64> = shard_sizes(trials)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(s, size)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[pi as u64, s as u64]));
                (0..size)
                    .map(|_| difficulty_reward(bin.sample(&mut rng) as usize, n).expect("k <= n"))
                    .sum()
            })
            .collect();
        let empirical = sums.iter().sum::<f64>() / trials as f64;
        let phi = phi_n(p, n);
        rows.push(Lemma1Row { p, empirical, phi, gap: (empirical - phi).abs() });
    }
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    Ok(Lemma1Report { n, trials, seed, rows, max_gap })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub p_plus: f64,
    pub p_minus: f64,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    pub mean: f64,
    pub target: f64,
    pub variance: f64,
    /// Standard error of `variance` from the fourth central moment.
    pub variance_se: f64,
    pub bound: f64,
}

#[derive(Clone, Copy, Default)]
struct Moments([f64; 5]);

impl Moments {
    fn push(&mut self, x: f64) {
        let mut p = 1.0;
        for slot in &mut self.0 {
            *slot += p;
            p *= x;
        }
    }

    fn merge(mut self, other: Moments) -> Self {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
        self
    }
}

/// Repeats the Monte-Carlo verifier over independent Bernoulli hit vectors
/// with rates `p_plus` (with evidence) and `p_minus` (without).
pub fn check_prop1(p_plus: f64, p_minus: f64, m: usize, trials: usize, seed: u64) -> Result<Prop1Report, SimError> {
    if trials < MIN_TRIALS {
        return Err(SimError::TooFewTrials(trials));
    }
    if m == 0 {
        return Err(SimError::NoSamples);
    }
    check_prob(p_plus)?;
    check_prob(p_minus)?;
    let shards: Vec<Moments> = shard_sizes(trials)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(s, size)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[s as u64]));
            let mut mom = Moments::default();
            let mut with = vec![false; m];
            let mut without = vec![false; m];
            for _ in 0..size {
                with.iter_mut().for_each(|h| *h = rng.random::<f64>() < p_plus);
                without.iter_mut().for_each(|h| *h = rng.random::<f64>() < p_minus);
                mom.push(verifier_estimate(&with, &without).expect("equal non-empty lengths"));
            }
            mom
        })
        .collect();
    let total = shards.into_iter().fold(Moments::default(), Moments::merge);
    let [n, s1, s2, s3, s4] = total.0;
    let mean = s1 / n;
    let raw2 = s2 / n;
    let central2 = (raw2 - mean * mean).max(0.0);
    let central4 = (s4 / n - 4.0 * mean * s3 / n + 6.0 * mean * mean * raw2 - 3.0 * mean.powi(4)).max(0.0);
    let variance = central2 * n / (n - 1.0);
    let variance_se = ((central4 - central2 * central2).max(0.0) / n).sqrt();
    Ok(Prop1Report {
        p_plus,
        p_minus,
        m,
        trials,
        seed,
        mean,
        target: p_plus - p_minus,
        variance,
        variance_se,
        bound: 1.0 / (2.0 * m as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximizerRow {
    pub n: usize,
    pub grid_argmax: f64,
    pub closed_form: f64,
    pub gap: f64,
}

/// Grid search for the maximizer of the expected difficulty reward, compared
/// with its closed form.
pub fn check_maximizer(ns: &[usize], step: f64) -> Result<Vec<MaximizerRow>, SimError> {
    let points = (1.0 / step).round() as usize;
    ns.iter()
        .map(|&n| {
            if n < 2 {
                return Err(SimError::TrialCount(n));
            }
            let (mut grid_argmax, mut best) = (0.0, f64::MIN);
            for i in 0..=points {
                let p = i as f64 / points as f64;
                let v = phi_n(p, n);
                if v > best {
                    (grid_argmax, best) = (p, v);
                }
            }
            let closed_form = phi_argmax(n);
            Ok(MaximizerRow { n, grid_argmax, closed_form, gap: (grid_argmax - closed_form).abs() })
        })
        .collect()
}

/// The p grid {0.1, ..., 0.9}.
pub fn default_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

impl std::fmt::Display for Lemma1Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "difficulty reward, n = {}, {} trials", self.n, self.trials)?;
        writeln!(f, "{:>6} {:>10} {:>10} {:>10}", "p", "empirical", "phi_n", "gap")?;
        for r in &self.rows {
            writeln!(f, "{:>6.3} {:>10.6} {:>10.6} {:>10.6}", r.p, r.empirical, r.phi, r.gap)?;
        }
        write!(f, "max gap {:.6}", self.max_gap)
    }
}

impl std::fmt::Display for Prop1Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "verifier, p+ = {}, p- = {}, m = {}, {} trials",
            self.p_plus, self.p_minus, self.m, self.trials
        )?;
        writeln!(f, "mean     {:.6} (target {:.6})", self.mean, self.target)?;
        write!(f, "variance {:.6} (bound {:.6}, se {:.6})", self.variance, self.bound, self.variance_se)
    }
}
