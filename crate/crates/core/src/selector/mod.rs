//! Optional corpus selector: documents are clustered in embedding space and
//! two UCB1 bandits pick a topic cluster and a question type for each
//! proposer prompt. Bandits are updated between iterations only.

pub mod bandit;
pub mod embed;
pub mod kmeans;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

pub use bandit::{
    batch_probabilities, feedback_update, inherit_stats, quality_proxy, sample_document,
    select_arm, select_batch, selector_rewards, ucb_score, Arm, BanditState,
};
pub use embed::{Embedder, HashingEmbedder};
pub use kmeans::KMeansFit;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("cannot form {k} clusters from {distinct} distinct embeddings")]
    TooManyClusters { k: usize, distinct: usize },
    #[error("arm {arm} out of range for a bandit with {arms} arms")]
    UnknownArm { arm: usize, arms: usize },
    #[error("unknown task type {0:?}")]
    UnknownTaskType(String),
    #[error("snapshot version {found} is not supported (expected {SNAPSHOT_VERSION})")]
    SnapshotVersion { found: u32 },
    #[error("snapshot does not match corpus: {0}")]
    SnapshotMismatch(String),
    #[error("selector snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("selector snapshot format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Factual,
    Comparison,
    Causal,
    Temporal,
    Aggregation,
}

impl TaskType {
    pub const ALL: [TaskType; 5] = [
        TaskType::Factual,
        TaskType::Comparison,
        TaskType::Causal,
        TaskType::Temporal,
        TaskType::Aggregation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            TaskType::Factual => "factual",
            TaskType::Comparison => "comparison",
            TaskType::Causal => "causal",
            TaskType::Temporal => "temporal",
            TaskType::Aggregation => "aggregation",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TaskType {
    type Err = SelectorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| SelectorError::UnknownTaskType(s.to_owned()))
    }
}

/// Number of clusters at round `t`.
pub fn cluster_count(t: u64, k0: usize, alpha: f64) -> usize {
    k0 + (alpha * t as f64).floor() as usize
}

pub fn recluster(embeddings: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit, SelectorError> {
    kmeans::fit(embeddings, k, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub enabled: bool,
    pub k0: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_u: f64,
    pub epsilon: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            k0: 10,
            alpha: 0.0,
            beta: 1.0,
            lambda_u: 0.5,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// Document index to cluster index.
    pub assignment: Vec<usize>,
    /// Times each document has been sampled so far.
    pub usage: Vec<u32>,
    pub round: u64,
    pub k0: usize,
    pub alpha: f64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Members of `cluster` with their distance to its centroid.
    pub fn members(&self, embeddings: &[Vec<f64>], cluster: usize) -> Vec<(usize, f64)> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == cluster)
            .map(|(d, _)| (d, kmeans::distance(&embeddings[d], &self.centroids[cluster])))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub doc: usize,
    pub cluster: usize,
    pub task: TaskType,
}

/// One generated sample fed back to the bandits after an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSample {
    pub cluster: usize,
    pub task: TaskType,
    pub question: String,
    pub answer: String,
}

/// Run-level score in [0, 1]: the mean of the latest proposer and solver
/// mean rewards, or the proposer mean alone before any solver phase.
pub fn run_score(proposer_mean: f64, solver_mean: Option<f64>) -> f64 {
    let raw = match solver_mean {
        Some(s) => 0.5 * (proposer_mean + s),
        None => {
            warn!("no solver mean reward yet; selector run score uses the proposer mean alone");
            proposer_mean
        }
    };
    raw.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorSnapshot {
    pub version: u32,
    pub seed: u64,
    pub config: SelectorConfig,
    pub clusters: ClusterModel,
    pub cluster_bandit: BanditState,
    pub task_bandit: BanditState,
    pub last_proposer_mean: Option<f64>,
    pub last_solver_mean: Option<f64>,
}

pub struct Selector {
    config: SelectorConfig,
    seed: u64,
    embeddings: Vec<Vec<f64>>,
    clusters: ClusterModel,
    cluster_bandit: BanditState,
    task_bandit: BanditState,
    pub last_proposer_mean: Option<f64>,
    pub last_solver_mean: Option<f64>,
}

impl Selector {
    pub fn new(
        embeddings: Vec<Vec<f64>>,
        config: SelectorConfig,
        seed: u64,
    ) -> Result<Self, SelectorError> {
        let k = capped_k(cluster_count(0, config.k0, config.alpha), &embeddings);
        let fit = recluster(&embeddings, k, round_seed(seed, 0))?;
        let n = embeddings.len();
        Ok(Self {
            clusters: ClusterModel {
                centroids: fit.centroids,
                assignment: fit.assignment,
                usage: vec![0; n],
                round: 0,
                k0: config.k0,
                alpha: config.alpha,
            },
            cluster_bandit: BanditState::new(k, config.beta),
            task_bandit: BanditState::new(TaskType::ALL.len(), config.beta),
            embeddings,
            config,
            seed,
            last_proposer_mean: None,
            last_solver_mean: None,
        })
    }

    pub fn clusters(&self) -> &ClusterModel {
        &self.clusters
    }

    pub fn cluster_bandit(&self) -> &BanditState {
        &self.cluster_bandit
    }

    pub fn task_bandit(&self) -> &BanditState {
        &self.task_bandit
    }

    /// Moves to the next round, re-clustering and inheriting cluster-bandit
    /// statistics when the schedule asks for more clusters.
    pub fn advance_round(&mut self) -> Result<(), SelectorError> {
        let round = self.clusters.round + 1;
        let k = capped_k(
            cluster_count(round, self.config.k0, self.config.alpha),
            &self.embeddings,
        );
        if k > self.clusters.k() {
            let fit = recluster(&self.embeddings, k, round_seed(self.seed, round))?;
            self.cluster_bandit =
                inherit_stats(&self.cluster_bandit, &self.clusters.centroids, &fit.centroids);
            info!(round, k, "re-clustered corpus");
            self.clusters.centroids = fit.centroids;
            self.clusters.assignment = fit.assignment;
        }
        self.clusters.round = round;
        Ok(())
    }

    /// Picks `n` (document, cluster, task type) triples. A single pick uses
    /// the UCB argmax; larger batches draw from the rescaled softmax.
    pub fn draw<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Vec<Selection> {
        let (clusters, tasks) = if n == 1 {
            (
                vec![select_arm(&self.cluster_bandit)],
                vec![select_arm(&self.task_bandit)],
            )
        } else {
            (
                select_batch(&self.cluster_bandit, n, rng),
                select_batch(&self.task_bandit, n, rng),
            )
        };
        let mut out = Vec::with_capacity(n);
        for (cluster, task) in clusters.into_iter().zip(tasks) {
            let members = self.clusters.members(&self.embeddings, cluster);
            let doc = sample_document(&members, &self.clusters.usage, rng)
                .unwrap_or_else(|| rng.random_range(0..self.embeddings.len()));
            self.clusters.usage[doc] += 1;
            out.push(Selection {
                doc,
                cluster,
                task: TaskType::ALL[task],
            });
        }
        out
    }

    pub fn feedback(&mut self, samples: &[FeedbackSample], r_run: f64) -> Result<(), SelectorError> {
        let mut dupes: HashMap<&str, usize> = HashMap::new();
        for s in samples {
            *dupes.entry(s.question.as_str()).or_default() += 1;
        }
        let rewards: Vec<f64> = samples
            .iter()
            .map(|s| {
                r_run
                    * quality_proxy(
                        s.question.chars().count(),
                        s.answer.chars().count(),
                        dupes[s.question.as_str()],
                    )
            })
            .collect();
        let by_cluster: Vec<(usize, f64)> =
            samples.iter().zip(&rewards).map(|(s, r)| (s.cluster, *r)).collect();
        let by_task: Vec<(usize, f64)> = samples
            .iter()
            .zip(&rewards)
            .map(|(s, r)| (s.task.index(), *r))
            .collect();
        let (lu, eps) = (self.config.lambda_u, self.config.epsilon);
        self.cluster_bandit = feedback_update(&self.cluster_bandit, &by_cluster, lu, eps)?;
        self.task_bandit = feedback_update(&self.task_bandit, &by_task, lu, eps)?;
        Ok(())
    }

    pub fn snapshot(&self) -> SelectorSnapshot {
        SelectorSnapshot {
            version: SNAPSHOT_VERSION,
            seed: self.seed,
            config: self.config,
            clusters: self.clusters.clone(),
            cluster_bandit: self.cluster_bandit.clone(),
            task_bandit: self.task_bandit.clone(),
            last_proposer_mean: self.last_proposer_mean,
            last_solver_mean: self.last_solver_mean,
        }
    }

    pub fn from_snapshot(
        snapshot: SelectorSnapshot,
        embeddings: Vec<Vec<f64>>,
    ) -> Result<Self, SelectorError> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(SelectorError::SnapshotVersion {
                found: snapshot.version,
            });
        }
        if snapshot.clusters.assignment.len() != embeddings.len() {
            return Err(SelectorError::SnapshotMismatch(format!(
                "{} assigned documents, corpus has {}",
                snapshot.clusters.assignment.len(),
                embeddings.len()
            )));
        }
        if snapshot.cluster_bandit.len() != snapshot.clusters.k() {
            return Err(SelectorError::SnapshotMismatch(
                "cluster bandit and centroid counts differ".into(),
            ));
        }
        Ok(Self {
            config: snapshot.config,
            seed: snapshot.seed,
            embeddings,
            clusters: snapshot.clusters,
            cluster_bandit: snapshot.cluster_bandit,
            task_bandit: snapshot.task_bandit,
            last_proposer_mean: snapshot.last_proposer_mean,
            last_solver_mean: snapshot.last_solver_mean,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SelectorError> {
        let text = serde_json::to_string_pretty(&self.snapshot())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path, embeddings: Vec<Vec<f64>>) -> Result<Self, SelectorError> {
        let snapshot: SelectorSnapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_snapshot(snapshot, embeddings)
    }
}

fn capped_k(k: usize, embeddings: &[Vec<f64>]) -> usize {
    let distinct = kmeans::distinct_count(embeddings);
    if k > distinct {
        warn!(k, distinct, "cluster count capped at the number of distinct embeddings");
        distinct.max(1)
    } else {
        k
    }
}

fn round_seed(seed: u64, round: u64) -> u64 {
    seed ^ round.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus_embeddings(n: usize) -> Vec<Vec<f64>> {
        let e = HashingEmbedder { dim: 16 };
        (0..n)
            .map(|i| e.embed(&format!("topic{} entity{} word{}", i % 4, i, i % 3)))
            .collect()
    }

    #[test]
    fn cluster_count_examples() {
        assert_eq!(cluster_count(123, 10, 0.0), 10);
        assert_eq!(cluster_count(0, 10, 0.5), 10);
        assert_eq!(cluster_count(5, 10, 0.5), 12);
    }

    #[test]
    fn task_types_round_trip() {
        for t in TaskType::ALL {
            assert_eq!(t.label().parse::<TaskType>().unwrap(), t);
            assert_eq!(TaskType::ALL[t.index()], t);
        }
        assert!("opinion".parse::<TaskType>().is_err());
    }

    #[test]
    fn fixed_schedule_never_reclusters() {
        let cfg = SelectorConfig { enabled: true, k0: 3, ..Default::default() };
        let mut s = Selector::new(corpus_embeddings(30), cfg, 5).unwrap();
        let first = s.clusters().assignment.clone();
        for _ in 0..6 {
            s.advance_round().unwrap();
            assert_eq!(s.clusters().assignment, first);
        }
    }

    #[test]
    fn growing_schedule_splits_and_conserves() {
        let cfg = SelectorConfig { enabled: true, k0: 2, alpha: 1.0, ..Default::default() };
        let mut s = Selector::new(corpus_embeddings(40), cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let picks = s.draw(8, &mut rng);
        let fb: Vec<FeedbackSample> = picks
            .iter()
            .map(|p| FeedbackSample {
                cluster: p.cluster,
                task: p.task,
                question: format!("Which river flows through city number {}?", p.doc),
                answer: "Danube".into(),
            })
            .collect();
        s.feedback(&fb, 0.6).unwrap();
        let before: f64 = s.cluster_bandit().arms.iter().map(|a| a.reward_sum).sum();
        s.advance_round().unwrap();
        assert_eq!(s.clusters().k(), 3);
        assert_eq!(s.cluster_bandit().len(), 3);
        assert!(s.cluster_bandit().arms.iter().all(|a| a.pulls >= 1));
        let after: f64 = s.cluster_bandit().arms.iter().map(|a| a.reward_sum).sum();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn draws_stay_inside_cluster_and_track_usage() {
        let cfg = SelectorConfig { enabled: true, k0: 4, ..Default::default() };
        let emb = corpus_embeddings(24);
        let mut s = Selector::new(emb, cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let picks = s.draw(50, &mut rng);
        for p in &picks {
            assert_eq!(s.clusters().assignment[p.doc], p.cluster);
        }
        assert_eq!(s.clusters().usage.iter().sum::<u32>(), 50);
        let single = s.draw(1, &mut rng);
        assert_eq!(single[0].task, TaskType::Factual);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("selector.json");
        let emb = corpus_embeddings(12);
        let mut s = Selector::new(emb.clone(), SelectorConfig { k0: 3, ..Default::default() }, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        s.draw(5, &mut rng);
        s.last_proposer_mean = Some(0.4);
        s.save(&path).unwrap();
        let loaded = Selector::load(&path, emb.clone()).unwrap();
        assert_eq!(loaded.snapshot(), s.snapshot());
        assert!(matches!(
            Selector::load(&path, emb[..5].to_vec()),
            Err(SelectorError::SnapshotMismatch(_))
        ));
    }

    #[test]
    fn small_corpus_caps_cluster_count() {
        let s = Selector::new(corpus_embeddings(4), SelectorConfig::default(), 0).unwrap();
        assert_eq!(s.clusters().k(), 4);
    }

    #[test]
    fn run_score_blends_and_clamps() {
        assert_eq!(run_score(0.4, Some(0.8)), 0.6000000000000001);
        assert_eq!(run_score(1.7, None), 1.0);
    }
}
