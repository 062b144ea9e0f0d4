//! Scalar rewards: format, difficulty, brevity, evidence verifier, and the
//! combined proposer and solver rewards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textkit::{exact_match, normalize, token_f1};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("invalid trial counts: k={k}, n={n} (need n >= 2 and k <= n)")]
    InvalidTrials { k: usize, n: usize },
    #[error("verifier hit vectors differ in length: {with} vs {without}")]
    LengthMismatch { with: usize, without: usize },
    #[error("verifier needs at least one sample per branch")]
    NoSamples,
    #[error("hop count {0} outside 1..=4")]
    InvalidHop(u8),
}

/// Prescribed number of reasoning/search hops for a generated question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Hop(u8);

impl Hop {
    pub const ALL: [Hop; 4] = [Hop(1), Hop(2), Hop(3), Hop(4)];

    pub fn new(h: u8) -> Result<Self, RewardError> {
        if (1..=4).contains(&h) {
            Ok(Hop(h))
        } else {
            Err(RewardError::InvalidHop(h))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Hop {
    type Error = RewardError;
    fn try_from(h: u8) -> Result<Self, Self::Error> {
        Hop::new(h)
    }
}

impl From<Hop> for u8 {
    fn from(h: Hop) -> u8 {
        h.0
    }
}

impl std::fmt::Display for Hop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Structural counts parsed from a proposer transcript.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatCounts {
    pub assistant_turns: usize,
    /// Assistant turns that open with a planning block.
    pub planning_turns: usize,
    /// Syntactically valid tool-call blocks (at most one per assistant turn).
    pub valid_tool_calls: usize,
    pub returned_responses: usize,
    pub parse_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub lambda_v: f64,
    pub lambda_b: f64,
    pub lambda_e: f64,
    pub l_max: usize,
    pub n_solver_trials: usize,
    pub m_verifier_samples: usize,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_v: 0.5,
            lambda_b: 0.1,
            lambda_e: 0.3,
            l_max: 256,
            n_solver_trials: 5,
            m_verifier_samples: 5,
        }
    }
}

impl RewardWeights {
    /// Difficulty-plus-format baseline: no verifier, no brevity term.
    pub fn without_evidence_terms() -> Self {
        Self {
            lambda_v: 0.0,
            lambda_b: 0.0,
            ..Self::default()
        }
    }
}

pub fn format_think(counts: &FormatCounts) -> f64 {
    counts.planning_turns as f64 / counts.assistant_turns.max(1) as f64
}

pub fn format_tool(counts: &FormatCounts, hop: Hop) -> f64 {
    let h = hop.get() as f64;
    if hop.get() == 1 {
        1.0
    } else if counts.valid_tool_calls == counts.returned_responses {
        ((1.0 + counts.valid_tool_calls as f64) / h).min(1.0)
    } else {
        0.0
    }
}

/// Short in-context answer score in {0, 0.5, 1}.
pub fn format_ans(answer: &str, context: &str) -> f64 {
    let a = normalize(answer);
    if matches!(a.tokens(), [t] if t == "yes" || t == "no") {
        return 1.0;
    }
    if a.is_empty() || !normalize(context).contains_run(&a) {
        return 0.0;
    }
    match a.word_len() {
        0..=5 => 1.0,
        6..=10 => 0.5,
        _ => 0.0,
    }
}

/// Equally weighted format reward. Zero when parsing failed or the question
/// or answer is empty.
pub fn format_score(
    counts: &FormatCounts,
    question: &str,
    answer: &str,
    context: &str,
    hop: Hop,
) -> f64 {
    if !counts.parse_ok || question.trim().is_empty() || answer.trim().is_empty() {
        return 0.0;
    }
    (1.0 + format_think(counts) + format_tool(counts, hop) + format_ans(answer, context)) / 4.0
}

/// Pays most when the solver succeeds on some but not all of `n` trials.
pub fn difficulty_reward(k: usize, n: usize) -> Result<f64, RewardError> {
    if n < 2 || k > n {
        return Err(RewardError::InvalidTrials { k, n });
    }
    if k == 0 || k == n {
        return Ok(0.0);
    }
    Ok((n - k) as f64 / (n - 1) as f64)
}

/// Expected difficulty reward when each of `n` trials succeeds with
/// probability `p`.
pub fn phi_n(p: f64, n: usize) -> f64 {
    let n_f = n as f64;
    let q = 1.0 - p;
    n_f / (n_f - 1.0) * q * (1.0 - q.powi(n as i32 - 1))
}

/// Solve probability at which [`phi_n`] peaks.
pub fn phi_argmax(n: usize) -> f64 {
    let n_f = n as f64;
    1.0 - n_f.powf(-1.0 / (n_f - 1.0))
}

pub fn brevity_bonus(evidence_tokens: usize, l_max: usize) -> f64 {
    (1.0 - evidence_tokens as f64 / l_max as f64).max(0.0)
}

/// Counts evidence length for the brevity bonus. Swap in a model tokenizer
/// when one is available.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Normalized word tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenCounter;

impl TokenCounter for WordTokenCounter {
    fn count(&self, text: &str) -> usize {
        normalize(text).word_len()
    }
}

/// Monte-Carlo verifier: accuracy with evidence minus accuracy without.
pub fn verifier_estimate(hits_with: &[bool], hits_without: &[bool]) -> Result<f64, RewardError> {
    if hits_with.len() != hits_without.len() {
        return Err(RewardError::LengthMismatch {
            with: hits_with.len(),
            without: hits_without.len(),
        });
    }
    if hits_with.is_empty() {
        return Err(RewardError::NoSamples);
    }
    let m = hits_with.len() as f64;
    let rate = |v: &[bool]| v.iter().filter(|h| **h).count() as f64 / m;
    Ok(rate(hits_with) - rate(hits_without))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposerComponents {
    pub fmt: f64,
    pub dz: f64,
    pub v_hat: f64,
    pub brev: f64,
}

/// Invalid rollouts only earn half their format score.
pub fn proposer_reward(c: &ProposerComponents, weights: &RewardWeights, valid: bool) -> f64 {
    if valid {
        0.5 * c.fmt + c.dz + weights.lambda_v * c.v_hat + weights.lambda_b * c.brev
    } else {
        0.5 * c.fmt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverScore {
    pub em: bool,
    pub evidence_f1: f64,
    pub total: f64,
}

pub fn score_solver(
    pred_answer: &str,
    pred_evidence: &str,
    gold_answer: &str,
    gold_evidence: &str,
    lambda_e: f64,
) -> SolverScore {
    let em = exact_match(pred_answer, gold_answer);
    let evidence_f1 = token_f1(pred_evidence, gold_evidence);
    SolverScore {
        em,
        evidence_f1,
        total: if em { 1.0 } else { 0.0 } + lambda_e * evidence_f1,
    }
}

pub fn solver_reward(
    pred_answer: &str,
    pred_evidence: &str,
    gold_answer: &str,
    gold_evidence: &str,
    lambda_e: f64,
) -> f64 {
    score_solver(pred_answer, pred_evidence, gold_answer, gold_evidence, lambda_e).total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(ass: usize, think: usize, tc: usize, ret: usize) -> FormatCounts {
        FormatCounts {
            assistant_turns: ass,
            planning_turns: think,
            valid_tool_calls: tc,
            returned_responses: ret,
            parse_ok: true,
        }
    }

    fn hop(h: u8) -> Hop {
        Hop::new(h).unwrap()
    }

    /// Expectation of the difficulty reward by summing over all binomial
    /// outcomes, independent of the closed form.
    fn brute_expectation(p: f64, n: usize) -> f64 {
        let mut total = 0.0;
        for k in 0..=n {
            let mut choose = 1.0;
            for i in 0..k {
                choose = choose * (n - i) as f64 / (i + 1) as f64;
            }
            let prob = choose * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
            let r = if k == 0 || k == n { 0.0 } else { (n - k) as f64 / (n - 1) as f64 };
            total += prob * r;
        }
        total
    }

    #[test]
    fn hop_bounds() {
        assert!(Hop::new(0).is_err());
        assert!(Hop::new(5).is_err());
        assert_eq!(serde_json::to_string(&hop(3)).unwrap(), "3");
        assert!(serde_json::from_str::<Hop>("7").is_err());
    }

    #[test]
    fn think_examples() {
        assert_eq!(format_think(&counts(3, 3, 0, 0)), 1.0);
        assert_eq!(format_think(&counts(0, 0, 0, 0)), 0.0);
        assert_eq!(format_think(&counts(4, 1, 0, 0)), 0.25);
    }

    #[test]
    fn tool_examples() {
        assert_eq!(format_tool(&counts(2, 0, 7, 0), hop(1)), 1.0);
        assert!((format_tool(&counts(2, 0, 1, 1), hop(3)) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(format_tool(&counts(3, 0, 2, 1), hop(2)), 0.0);
        assert_eq!(format_tool(&counts(5, 0, 4, 4), hop(2)), 1.0);
    }

    #[test]
    fn ans_examples() {
        assert_eq!(format_ans("Yes", "nothing relevant"), 1.0);
        assert_eq!(format_ans("no.", ""), 1.0);
        let ctx = "It was designed by the engineer Gustave Eiffel and his company in Paris long ago.";
        assert_eq!(format_ans("Gustave Eiffel", ctx), 1.0);
        assert_eq!(format_ans("engineer Gustave Eiffel and his company", ctx), 0.5);
        assert_eq!(
            format_ans("designed by engineer Gustave Eiffel and his company in Paris long ago", ctx),
            0.0
        );
        assert_eq!(format_ans("Napoleon", ctx), 0.0);
        assert_eq!(format_ans("", ctx), 0.0);
    }

    #[test]
    fn format_score_examples() {
        let ctx = "Paris is the capital";
        assert_eq!(format_score(&counts(1, 1, 0, 0), "Where?", "Paris", ctx, hop(1)), 1.0);
        let mut bad = counts(1, 1, 0, 0);
        bad.parse_ok = false;
        assert_eq!(format_score(&bad, "Where?", "Paris", ctx, hop(1)), 0.0);
        assert_eq!(format_score(&counts(1, 1, 0, 0), "", "Paris", ctx, hop(1)), 0.0);
        // F_think = 1, F_tool = 2/3, F_ans = 0.5
        let ctx6 = "one two three four five six";
        let s = format_score(&counts(2, 2, 1, 1), "q?", "one two three four five six", ctx6, hop(3));
        assert!((s - (1.0 + 1.0 + 2.0 / 3.0 + 0.5) / 4.0).abs() < 1e-15);
        assert!((s - 0.791_666_666_666_666_6).abs() < 1e-12);
    }

    #[test]
    fn difficulty_examples() {
        assert_eq!(difficulty_reward(0, 5), Ok(0.0));
        assert_eq!(difficulty_reward(5, 5), Ok(0.0));
        assert_eq!(difficulty_reward(2, 5), Ok(0.75));
        assert!(difficulty_reward(6, 5).is_err());
        assert!(difficulty_reward(0, 1).is_err());
    }

    #[test]
    fn phi_examples() {
        for n in 2..=10 {
            assert_eq!(phi_n(0.0, n), 0.0);
            assert_eq!(phi_n(1.0, n), 0.0);
        }
        assert_eq!(brute_expectation(0.5, 2), 0.5);
        assert!((phi_n(0.5, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn phi_matches_brute_force_expectation() {
        for n in 2..=12 {
            for i in 0..=100 {
                let p = i as f64 / 100.0;
                assert!((phi_n(p, n) - brute_expectation(p, n)).abs() < 1e-12, "p={p} n={n}");
            }
        }
    }

    #[test]
    fn phi_argmax_matches_grid() {
        for n in 2..=10 {
            let (mut best_p, mut best) = (0.0, f64::MIN);
            for i in 0..=10_000 {
                let p = i as f64 * 1e-4;
                let v = phi_n(p, n);
                if v > best {
                    best = v;
                    best_p = p;
                }
            }
            let star = phi_argmax(n);
            assert!((best_p - star).abs() < 1e-3, "n={n}: grid {best_p} vs {star}");
            assert!(phi_n(star, n) >= best - 1e-15);
        }
        assert!((phi_argmax(2) - 0.5).abs() < 1e-4);
        assert!((phi_argmax(5) - (1.0 - 5f64.powf(-0.25))).abs() < 1e-15);
    }

    #[test]
    fn brevity_examples() {
        assert_eq!(brevity_bonus(0, 256), 1.0);
        assert_eq!(brevity_bonus(256, 256), 0.0);
        assert_eq!(brevity_bonus(128, 256), 0.5);
        assert_eq!(brevity_bonus(1000, 256), 0.0);
        assert_eq!(WordTokenCounter.count("The tower, in Paris."), 3);
    }

    #[test]
    fn verifier_examples() {
        let t = [true; 5];
        let f = [false; 5];
        assert_eq!(verifier_estimate(&t, &f), Ok(1.0));
        assert_eq!(verifier_estimate(&t, &t), Ok(0.0));
        let with = [true, true, true, false, false];
        let without = [true, false, false, false, false];
        assert!((verifier_estimate(&with, &without).unwrap() - 0.4).abs() < 1e-15);
        assert!(verifier_estimate(&t, &f[..4]).is_err());
        assert_eq!(verifier_estimate(&[], &[]), Err(RewardError::NoSamples));
    }

    #[test]
    fn proposer_examples() {
        let w = RewardWeights::default();
        let c = ProposerComponents { fmt: 1.0, dz: 0.75, v_hat: 0.4, brev: 0.5 };
        assert!((proposer_reward(&c, &w, true) - 1.5).abs() < 1e-15);
        let inv = ProposerComponents { fmt: 0.25, ..Default::default() };
        assert_eq!(proposer_reward(&inv, &w, false), 0.125);
        let base = RewardWeights::without_evidence_terms();
        assert_eq!(proposer_reward(&c, &base, true), 0.5 + 0.75);
    }

    #[test]
    fn solver_examples() {
        let e = "built in 1889 by Gustave Eiffel";
        assert!((solver_reward("Eiffel", e, "eiffel", e, 0.3) - 1.3).abs() < 1e-15);
        assert_eq!(solver_reward("Napoleon", "apples", "Eiffel", e, 0.3), 0.0);
        assert!((solver_reward("Eiffel", "alpha beta", "Eiffel", "beta gamma", 0.3) - 1.15).abs() < 1e-15);
    }

    #[test]
    fn weights_defaults() {
        let w = RewardWeights::default();
        assert_eq!((w.lambda_v, w.lambda_b, w.lambda_e), (0.5, 0.1, 0.3));
        assert_eq!((w.l_max, w.n_solver_trials, w.m_verifier_samples), (256, 5, 5));
    }

    proptest! {
        #[test]
        fn difficulty_bounded_and_decreasing(n in 2usize..40) {
            let mut prev = f64::INFINITY;
            for k in 0..=n {
                let r = difficulty_reward(k, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&r));
                if (1..n).contains(&k) {
                    prop_assert!(r < prev);
                    prev = r;
                }
            }
        }

        #[test]
        fn verifier_in_range(v in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..20)) {
            let (a, b): (Vec<bool>, Vec<bool>) = v.into_iter().unzip();
            let x = verifier_estimate(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&x));
        }

        #[test]
        fn proposer_monotone(
            fmt in 0.0f64..1.0, dz in 0.0f64..1.0, v in -1.0f64..1.0, b in 0.0f64..1.0,
            bump in 0.0f64..0.5, lv in 0.0f64..2.0, lb in 0.0f64..2.0, which in 0usize..4,
        ) {
            let w = RewardWeights { lambda_v: lv, lambda_b: lb, ..RewardWeights::default() };
            let base = ProposerComponents { fmt, dz, v_hat: v, brev: b };
            let mut up = base;
            match which {
                0 => up.fmt += bump,
                1 => up.dz += bump,
                2 => up.v_hat += bump,
                _ => up.brev += bump,
            }
            for valid in [true, false] {
                prop_assert!(proposer_reward(&up, &w, valid) >= proposer_reward(&base, &w, valid));
            }
        }
    }
}
