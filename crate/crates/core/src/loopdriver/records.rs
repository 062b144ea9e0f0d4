//! Advantage-annotated training records and their line-delimited export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LoopError;
use crate::jsonl::{self, Writer};
use crate::policy::RolloutTranscript;
use crate::reward::Hop;
use crate::selector::TaskType;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Components {
    Proposer {
        fmt: f64,
        dz: f64,
        v_hat: f64,
        brev: f64,
        /// Correct solver rollouts out of `n`.
        #[serde(skip_serializing_if = "Option::is_none")]
        solver_hits: Option<usize>,
    },
    Solver {
        em: bool,
        evidence_f1: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: String,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub schema_version: u32,
    pub iteration: u64,
    pub phase: Phase,
    /// Position within the batch.
    pub index: usize,
    pub group_key: String,
    pub question: String,
    pub answer: String,
    pub evidence: String,
    pub hop: Option<Hop>,
    pub doc_id: Option<String>,
    pub cluster: Option<usize>,
    pub task_type: Option<TaskType>,
    pub valid: bool,
    /// Endpoint failure; excluded from advantage groups.
    pub failed: bool,
    pub components: Components,
    pub reward: f64,
    /// Set for every non-failed record once the batch is standardized.
    pub advantage: Option<f64>,
    /// Seed of the rollout that produced this record.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub transcript: RolloutTranscript,
}

/// Appends `records` to `path`. The file is opened before any record is
/// touched.
pub fn export_batch(records: &[TrainingRecord], path: &Path) -> Result<(), LoopError> {
    let mut w = Writer::append(path)?;
    if let Some(r) = records.iter().find(|r| !r.failed && r.advantage.is_none()) {
        return Err(LoopError::MissingAdvantage { iteration: r.iteration, index: r.index });
    }
    for r in records {
        w.write(r)?;
    }
    Ok(w.finish()?)
}

pub fn read_batch(path: &Path) -> Result<Vec<TrainingRecord>, LoopError> {
    Ok(jsonl::read(path)?)
}
