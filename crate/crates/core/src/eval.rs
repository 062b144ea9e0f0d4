//! Answer exact match, judged evidence score and their conjunction over a
//! question-answering dataset.

use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::dataset::DatasetRow;
use crate::jsonl::{self, JsonlError};
use crate::policy::prompts::{judge_messages, solver_messages};
use crate::policy::{
    find_block, run_multiturn, ChatRequest, Gateway, ModelRole, RolloutLimits, Sampling,
};
use crate::retrieval::SearchHandle;
use crate::seeds;
use crate::textkit::exact_match;

/// Bumped whenever the judge template in `policy::prompts` changes.
pub const JUDGE_TEMPLATE_VERSION: u32 = 1;

const JUDGE_SAMPLING: Sampling = Sampling {
    temperature: 0.0,
    max_tokens: 16,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("writing summary: {0}")]
    Summary(#[source] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Judgement {
    Accept,
    Reject,
    /// Rejected without a call.
    EmptySpan,
    /// The reply did not hold a yes/no answer block.
    Unparseable(String),
    /// The judge could not be reached.
    Failed(String),
}

impl Judgement {
    pub fn verdict(&self) -> Option<bool> {
        match self {
            Judgement::Accept => Some(true),
            Judgement::Reject | Judgement::EmptySpan | Judgement::Unparseable(_) => Some(false),
            Judgement::Failed(_) => None,
        }
    }

    pub fn flagged(&self) -> bool {
        matches!(self, Judgement::Unparseable(_) | Judgement::Failed(_))
    }
}

/// Strict reading of a judge reply: an answer block holding yes or no.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    match find_block(reply, "answer").content?.to_ascii_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Asks the judge whether `span` supports `gold` as the answer to
/// `question`. The judge sees nothing else.
pub async fn judge_evidence(gateway: &Gateway, question: &str, gold: &str, span: &str, seed: u64) -> Judgement {
    if span.trim().is_empty() {
        return Judgement::EmptySpan;
    }
    let request = ChatRequest::new(judge_messages(question, gold, span), JUDGE_SAMPLING).with_seed(seed);
    match gateway.complete(ModelRole::Judge, &request).await {
        Ok(reply) => match parse_verdict(&reply) {
            Some(true) => Judgement::Accept,
            Some(false) => Judgement::Reject,
            None => Judgement::Unparseable(reply.chars().take(200).collect()),
        },
        Err(e) => Judgement::Failed(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    pub gold_answer: String,
    pub predicted_answer: String,
    pub predicted_evidence: String,
    pub em: bool,
    pub judgement: Judgement,
    pub judge_verdict: Option<bool>,
    pub joint: bool,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub records: usize,
    pub em: f64,
    pub evidence: f64,
    pub joint: f64,
    pub evidence_present: f64,
    pub judge_failures: usize,
    pub judge_template_version: u32,
}

impl EvalSummary {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let rate = |f: &dyn Fn(&EvalRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
        Self {
            records: records.len(),
            em: rate(&|r| r.em),
            evidence: rate(&|r| r.judge_verdict == Some(true)),
            joint: rate(&|r| r.joint),
            evidence_present: rate(&|r| !r.predicted_evidence.trim().is_empty()),
            judge_failures: records.iter().filter(|r| r.flagged).count(),
            judge_template_version: JUDGE_TEMPLATE_VERSION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub limits: RolloutLimits,
    pub sampling: Sampling,
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            limits: RolloutLimits::default(),
            sampling: Sampling::GREEDY,
            parallelism: 8,
            seed: 0,
        }
    }
}

async fn evaluate_row(gateway: &Gateway, search: &SearchHandle, row: &DatasetRow, opts: EvalOptions, i: usize) -> EvalRecord {
    let seed = seeds::derive(opts.seed, &[i as u64]);
    let transcript = run_multiturn(
        gateway,
        ModelRole::Solver,
        solver_messages(&row.question),
        search,
        opts.limits,
        opts.sampling,
        seed,
    )
    .await;
    let predicted_answer = transcript.final_answer();
    let predicted_evidence = transcript.final_evidence();
    let em = exact_match(&predicted_answer, &row.answer);
    let judgement = judge_evidence(
        gateway,
        &row.question,
        &row.answer,
        &predicted_evidence,
        seeds::derive(seed, &[1]),
    )
    .await;
    if judgement.flagged() {
        warn!(question = %row.question, ?judgement, "judge did not return a verdict");
    }
    let judge_verdict = judgement.verdict();
    EvalRecord {
        question: row.question.clone(),
        gold_answer: row.answer.clone(),
        predicted_answer,
        predicted_evidence,
        em,
        joint: em && judge_verdict == Some(true),
        flagged: judgement.flagged(),
        judge_verdict,
        judgement,
        rollout_error: transcript.error,
    }
}

/// Greedy solver rollouts with search, then one judge call per emitted
/// span. Records come back in dataset order.
pub async fn evaluate(
    rows: &[DatasetRow],
    gateway: &Gateway,
    search: &SearchHandle,
    opts: EvalOptions,
) -> Result<(EvalSummary, Vec<EvalRecord>), EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let records: Vec<EvalRecord> = stream::iter(rows.iter().enumerate())
        .map(|(i, row)| evaluate_row(gateway, search, row, opts, i))
        .buffered(opts.parallelism.max(1))
        .collect()
        .await;
    Ok((EvalSummary::from_records(&records), records))
}

/// Writes `summary.json` and `records.jsonl` into `dir`.
pub fn write_report(dir: &Path, summary: &EvalSummary, records: &[EvalRecord]) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(EvalError::Summary)?;
    jsonl::write(&dir.join("records.jsonl"), records)?;
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(dir.join("summary.json"), text + "\n").map_err(EvalError::Summary)
}
