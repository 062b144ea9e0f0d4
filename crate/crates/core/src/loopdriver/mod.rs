//! Proposer iterations, solver-dataset generation and solver iterations.

pub mod config;
pub mod records;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use futures::future::join_all;
use futures::stream::{self, StreamExt};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

pub use config::{EndpointConfig, RunConfig, Runtime};
pub use records::{export_batch, read_batch, Components, Phase, Prediction, TrainingRecord, SCHEMA_VERSION};

use crate::advantage::{group_advantages, hop_grouped_advantages, GroupedRewards};
use crate::dataset::DatasetRow;
use crate::jsonl::{JsonlError, Writer};
use crate::policy::prompts::{proposer_messages, solver_messages};
use crate::policy::{parse_proposer, run_multiturn, run_singleturn, ModelRole, RolloutTranscript};
use crate::retrieval::RetrievalError;
use crate::reward::{
    brevity_bonus, difficulty_reward, format_score, proposer_reward, score_solver, verifier_estimate,
    Hop, TokenCounter, WordTokenCounter,
};
use crate::seeds;
use crate::selector::{run_score, Embedder, FeedbackSample, HashingEmbedder, Selection, Selector, SelectorError};
use crate::textkit::{exact_match, is_valid_pair, is_verbatim_span};

const TAG_A: u64 = 1;
const TAG_B: u64 = 2;
const TAG_GEN: u64 = 3;
const PURPOSE_PROPOSER: u64 = 0;
const PURPOSE_SOLVER: u64 = 1;
const PURPOSE_WITH: u64 = 2;
const PURPOSE_WITHOUT: u64 = 3;

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("config: {0}")]
    Config(String),
    #[error("environment variable {0} is not set")]
    MissingSecret(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error("{failed} of {total} rollouts failed; aborting iteration ({first_error})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_error: String,
    },
    #[error("record {index} of iteration {iteration} has no advantage")]
    MissingAdvantage { iteration: u64, index: usize },
    #[error("no valid triples in {attempts} proposer rollouts")]
    NoValidTriples { attempts: usize },
    #[error("solver dataset is empty")]
    EmptyDataset,
}

impl LoopError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        LoopError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

fn hop_sampler(config: &RunConfig) -> WeightedIndex<f64> {
    WeightedIndex::new(config.hop_probabilities().map(|(_, p)| p)).expect("validated pmf")
}

fn check_failures<'a>(errors: impl Iterator<Item = Option<&'a str>>, total: usize) -> Result<(), LoopError> {
    let errors: Vec<&str> = errors.flatten().collect();
    if total > 0 && errors.len() * 2 > total {
        return Err(LoopError::TooManyFailures {
            failed: errors.len(),
            total,
            first_error: errors[0].to_owned(),
        });
    }
    if !errors.is_empty() {
        warn!(failed = errors.len(), total, "some rollouts failed and were excluded");
    }
    Ok(())
}

/// Document embeddings for the selector.
pub fn embed_corpus(rt: &Runtime) -> Vec<Vec<f64>> {
    let embedder = HashingEmbedder::default();
    rt.index
        .documents
        .par_iter()
        .map(|d| embedder.embed(&format!("{} {}", d.title, d.text)))
        .collect()
}

struct Pick {
    doc: usize,
    hop: Hop,
    selection: Option<Selection>,
}

fn draw_picks(rt: &Runtime, iteration: u64, selector: Option<&mut Selector>) -> Vec<Pick> {
    let cfg = &rt.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[TAG_A, iteration]));
    let selections: Vec<Option<Selection>> = match selector {
        Some(s) => s.draw(cfg.batch_size, &mut rng).into_iter().map(Some).collect(),
        None => vec![None; cfg.batch_size],
    };
    let hops = hop_sampler(cfg);
    selections
        .into_iter()
        .map(|selection| Pick {
            doc: selection.map_or_else(|| rng.random_range(0..rt.index.len()), |s| s.doc),
            hop: Hop::ALL[hops.sample(&mut rng)],
            selection,
        })
        .collect()
}

struct Proposal {
    transcript: RolloutTranscript,
    question: String,
    answer: String,
    evidence: String,
    fmt: f64,
    valid: bool,
    verbatim: bool,
    warnings: Vec<String>,
}

async fn propose(rt: &Runtime, doc: usize, hop: Hop, selection: Option<Selection>, seed: u64) -> Proposal {
    let cfg = &rt.config;
    let doc = rt.index.document(doc);
    let transcript = run_multiturn(
        &rt.gateway,
        ModelRole::Proposer,
        proposer_messages(doc, hop, selection.map(|s| s.task)),
        &rt.search,
        cfg.limits,
        cfg.sampling.rollout,
        seed,
    )
    .await;
    let out = parse_proposer(&transcript, &doc.text);
    let fmt = format_score(&out.counts, &out.question, &out.answer, &out.sources.join("\n"), hop);
    let valid = !transcript.failed() && out.parse_ok() && fmt > 0.0 && is_valid_pair(&out.question, &out.answer);
    Proposal {
        verbatim: is_verbatim_span(&out.evidence, &out.sources),
        transcript,
        question: out.question,
        answer: out.answer,
        evidence: out.evidence,
        fmt,
        valid,
        warnings: out.warnings,
    }
}

/// Solver hit count over `n` multi-turn rollouts, then the verifier estimate
/// from `m` decodes with the evidence and `m` without.
async fn score_valid(rt: &Runtime, p: &Proposal, base: u64) -> Result<(usize, f64), String> {
    let cfg = &rt.config;
    let n = cfg.weights.n_solver_trials;
    let m = cfg.weights.m_verifier_samples;
    let trials = join_all((0..n).map(|j| {
        run_multiturn(
            &rt.gateway,
            ModelRole::Solver,
            solver_messages(&p.question),
            &rt.search,
            cfg.limits,
            cfg.sampling.rollout,
            seeds::derive(base, &[PURPOSE_SOLVER, j as u64]),
        )
    }))
    .await;
    if let Some(t) = trials.iter().find(|t| t.failed()) {
        return Err(t.error.clone().unwrap_or_default());
    }
    let k = trials.iter().filter(|t| exact_match(&t.final_answer(), &p.answer)).count();

    let evidence = p.evidence.as_str();
    let decode = |with_evidence: bool, purpose: u64, j: usize| {
        run_singleturn(
            &rt.gateway,
            &p.question,
            with_evidence.then_some(evidence),
            cfg.sampling.single_turn,
            seeds::derive(base, &[purpose, j as u64]),
        )
    };
    let with = join_all((0..m).map(|j| decode(true, PURPOSE_WITH, j))).await;
    let without = join_all((0..m).map(|j| decode(false, PURPOSE_WITHOUT, j))).await;
    let hits = |answers: Vec<Result<String, crate::policy::PolicyError>>| -> Result<Vec<bool>, String> {
        answers
            .into_iter()
            .map(|a| a.map(|a| exact_match(&a, &p.answer)).map_err(|e| e.to_string()))
            .collect()
    };
    let v_hat = verifier_estimate(&hits(with)?, &hits(without)?).map_err(|e| e.to_string())?;
    Ok((k, v_hat))
}

async fn phase_a_record(rt: &Runtime, iteration: u64, i: usize, pick: &Pick) -> TrainingRecord {
    let cfg = &rt.config;
    let base = seeds::derive(cfg.seed, &[TAG_A, iteration, i as u64]);
    let seed = seeds::derive(base, &[PURPOSE_PROPOSER]);
    let p = propose(rt, pick.doc, pick.hop, pick.selection, seed).await;
    let mut failed = p.transcript.failed();
    let mut error = p.transcript.error.clone();
    let mut components = Components::Proposer {
        fmt: p.fmt,
        dz: 0.0,
        v_hat: 0.0,
        brev: 0.0,
        solver_hits: None,
    };
    let mut reward = 0.0;
    if !failed {
        if p.valid {
            match score_valid(rt, &p, base).await {
                Ok((k, v_hat)) => {
                    let dz = difficulty_reward(k, cfg.weights.n_solver_trials).expect("k <= n, n >= 2");
                    let brev = brevity_bonus(WordTokenCounter.count(&p.evidence), cfg.weights.l_max);
                    let parts = crate::reward::ProposerComponents { fmt: p.fmt, dz, v_hat, brev };
                    reward = proposer_reward(&parts, &cfg.weights, true);
                    components = Components::Proposer { fmt: p.fmt, dz, v_hat, brev, solver_hits: Some(k) };
                }
                Err(e) => {
                    failed = true;
                    error = Some(e);
                }
            }
        } else {
            let parts = crate::reward::ProposerComponents { fmt: p.fmt, ..Default::default() };
            reward = proposer_reward(&parts, &cfg.weights, false);
        }
    }
    if failed {
        reward = 0.0;
    }
    let doc = rt.index.document(pick.doc);
    TrainingRecord {
        schema_version: SCHEMA_VERSION,
        iteration,
        phase: Phase::A,
        index: i,
        group_key: format!("hop:{}", pick.hop),
        question: p.question,
        answer: p.answer,
        evidence: p.evidence,
        hop: Some(pick.hop),
        doc_id: Some(doc.id.clone()),
        cluster: pick.selection.map(|s| s.cluster),
        task_type: pick.selection.map(|s| s.task),
        valid: p.valid && !failed,
        failed,
        components,
        reward,
        advantage: None,
        seed,
        prediction: None,
        warnings: p.warnings,
        error,
        transcript: p.transcript,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAOutput {
    pub records: Vec<TrainingRecord>,
    /// Inputs for the selector update.
    pub feedback: Vec<FeedbackSample>,
    /// Mean reward over non-failed records.
    pub proposer_mean: f64,
}

/// One proposer iteration: sample (document, hop) pairs, roll out the
/// proposer, score each rollout and standardize rewards within hop groups.
pub async fn phase_a_iteration(
    rt: &Runtime,
    iteration: u64,
    selector: Option<&mut Selector>,
) -> Result<PhaseAOutput, LoopError> {
    let picks = draw_picks(rt, iteration, selector);
    let mut records: Vec<TrainingRecord> = stream::iter(picks.iter().enumerate())
        .map(|(i, pick)| phase_a_record(rt, iteration, i, pick))
        .buffered(rt.config.parallelism.max(1))
        .collect()
        .await;
    check_failures(
        records.iter().map(|r| r.failed.then(|| r.error.as_deref().unwrap_or("unknown"))),
        records.len(),
    )?;

    let kept: Vec<usize> = (0..records.len()).filter(|&i| !records[i].failed).collect();
    let mut groups = GroupedRewards::new(rt.config.delta0);
    for &i in &kept {
        groups.push(records[i].reward, records[i].hop.map(Hop::get));
    }
    for (&i, a) in kept.iter().zip(hop_grouped_advantages(&groups)) {
        records[i].advantage = Some(a);
    }

    let proposer_mean = if kept.is_empty() {
        0.0
    } else {
        kept.iter().map(|&i| records[i].reward).sum::<f64>() / kept.len() as f64
    };
    let feedback = kept
        .iter()
        .map(|&i| &records[i])
        .filter_map(|r| {
            Some(FeedbackSample {
                cluster: r.cluster?,
                task: r.task_type?,
                question: r.question.clone(),
                answer: r.answer.clone(),
            })
        })
        .collect();
    Ok(PhaseAOutput {
        records,
        feedback,
        proposer_mean,
    })
}

/// Solver iteration over up to `batch_size` dataset rows: `group_size`
/// rollouts per question, standardized within each question's group.
pub async fn phase_b_iteration(
    rt: &Runtime,
    dataset: &[DatasetRow],
    iteration: u64,
) -> Result<Vec<TrainingRecord>, LoopError> {
    if dataset.is_empty() {
        return Err(LoopError::EmptyDataset);
    }
    let cfg = &rt.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[TAG_B, iteration]));
    let rows: Vec<usize> = if dataset.len() <= cfg.batch_size {
        (0..dataset.len()).collect()
    } else {
        rand::seq::index::sample(&mut rng, dataset.len(), cfg.batch_size).into_vec()
    };
    let n = cfg.group_size;
    let jobs: Vec<(usize, usize, usize)> = rows
        .iter()
        .enumerate()
        .flat_map(|(slot, &row)| (0..n).map(move |j| (slot, row, j)))
        .collect();
    let mut records: Vec<TrainingRecord> = stream::iter(jobs)
        .map(|(slot, row, j)| {
            let gold = &dataset[row];
            let seed = seeds::derive(cfg.seed, &[TAG_B, iteration, slot as u64, j as u64]);
            async move {
                let transcript = run_multiturn(
                    &rt.gateway,
                    ModelRole::Solver,
                    solver_messages(&gold.question),
                    &rt.search,
                    cfg.limits,
                    cfg.sampling.rollout,
                    seed,
                )
                .await;
                let failed = transcript.failed();
                let prediction = Prediction {
                    answer: transcript.final_answer(),
                    evidence: transcript.final_evidence(),
                };
                let score = score_solver(
                    &prediction.answer,
                    &prediction.evidence,
                    &gold.answer,
                    &gold.evidence,
                    cfg.weights.lambda_e,
                );
                TrainingRecord {
                    schema_version: SCHEMA_VERSION,
                    iteration,
                    phase: Phase::B,
                    index: slot * n + j,
                    group_key: format!("q:{slot}"),
                    question: gold.question.clone(),
                    answer: gold.answer.clone(),
                    evidence: gold.evidence.clone(),
                    hop: gold.hop,
                    doc_id: gold.doc_id.clone(),
                    cluster: None,
                    task_type: None,
                    valid: !failed,
                    failed,
                    components: Components::Solver {
                        em: score.em,
                        evidence_f1: score.evidence_f1,
                    },
                    reward: if failed { 0.0 } else { score.total },
                    advantage: None,
                    seed,
                    prediction: Some(prediction),
                    warnings: Vec::new(),
                    error: transcript.error.clone(),
                    transcript,
                }
            }
        })
        .buffered(cfg.parallelism.max(1))
        .collect()
        .await;
    check_failures(
        records.iter().map(|r| r.failed.then(|| r.error.as_deref().unwrap_or("unknown"))),
        records.len(),
    )?;

    for group in records.chunks_mut(n) {
        let kept: Vec<usize> = (0..group.len()).filter(|&i| !group[i].failed).collect();
        let rewards: Vec<f64> = kept.iter().map(|&i| group[i].reward).collect();
        for (&i, a) in kept.iter().zip(group_advantages(&rewards, cfg.delta0)) {
            group[i].advantage = Some(a);
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub prompts: usize,
    pub rollouts: usize,
    pub failed: usize,
    pub valid: usize,
    pub not_verbatim: usize,
    pub duplicates: usize,
    pub kept: usize,
}

/// Rolls out the proposer `samples_per_prompt` times for each of `prompts`
/// (document, hop) prompts and keeps valid triples whose evidence is
/// verbatim. The first occurrence of a (question, answer) pair wins.
pub async fn generate_solver_dataset(
    rt: &Runtime,
    prompts: usize,
) -> Result<(Vec<DatasetRow>, GenerationStats), LoopError> {
    let cfg = &rt.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[TAG_GEN]));
    let hops = hop_sampler(cfg);
    let plan: Vec<(usize, Hop)> = (0..prompts)
        .map(|_| (rng.random_range(0..rt.index.len()), Hop::ALL[hops.sample(&mut rng)]))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..prompts)
        .flat_map(|p| (0..cfg.samples_per_prompt).map(move |s| (p, s)))
        .collect();
    let proposals: Vec<Proposal> = stream::iter(jobs)
        .map(|(p, s)| {
            let (doc, hop) = plan[p];
            propose(rt, doc, hop, None, seeds::derive(cfg.seed, &[TAG_GEN, p as u64, s as u64]))
        })
        .buffered(cfg.parallelism.max(1))
        .collect()
        .await;

    let mut stats = GenerationStats {
        prompts,
        rollouts: proposals.len(),
        ..Default::default()
    };
    check_failures(
        proposals
            .iter()
            .map(|p| p.transcript.failed().then(|| p.transcript.error.as_deref().unwrap_or("unknown"))),
        proposals.len(),
    )?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (k, p) in proposals.into_iter().enumerate() {
        if p.transcript.failed() {
            stats.failed += 1;
            continue;
        }
        if !p.valid {
            continue;
        }
        stats.valid += 1;
        if !p.verbatim {
            stats.not_verbatim += 1;
            continue;
        }
        if !seen.insert((p.question.clone(), p.answer.clone())) {
            stats.duplicates += 1;
            continue;
        }
        let (doc, hop) = plan[k / cfg.samples_per_prompt];
        rows.push(DatasetRow {
            question: p.question,
            answer: p.answer,
            evidence: p.evidence,
            hop: Some(hop),
            doc_id: Some(rt.index.document(doc).id.clone()),
        });
    }
    stats.kept = rows.len();
    if rows.is_empty() {
        return Err(LoopError::NoValidTriples {
            attempts: stats.rollouts,
        });
    }
    Ok((rows, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub schema_version: u32,
    pub documents: usize,
    pub config: RunConfig,
}

/// Writes `manifest.json` into `dir`. No timestamps, so repeated runs with
/// one config produce identical manifests.
pub fn write_manifest(dir: &Path, command: &str, rt: &Runtime) -> Result<Manifest, LoopError> {
    std::fs::create_dir_all(dir).map_err(|e| LoopError::io(dir, e))?;
    let manifest = Manifest {
        command: command.to_owned(),
        config_hash: rt.config.hash(),
        seed: rt.config.seed,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        schema_version: SCHEMA_VERSION,
        documents: rt.index.len(),
        config: rt.config.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| LoopError::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: u64,
    pub records: usize,
    pub valid: usize,
    pub failed: usize,
    pub single_turn_decodes: usize,
}

impl RunSummary {
    fn add(&mut self, records: &[TrainingRecord]) {
        self.iterations += 1;
        self.records += records.len();
        self.valid += records.iter().filter(|r| r.valid).count();
        self.failed += records.iter().filter(|r| r.failed).count();
    }
}

pub const PHASE_A_FILE: &str = "phase_a.jsonl";
pub const PHASE_B_FILE: &str = "phase_b.jsonl";
pub const SELECTOR_FILE: &str = "selector.json";

/// `steps` proposer iterations exported to `dir/phase_a.jsonl`.
pub async fn run_phase_a(rt: &Runtime, dir: &Path) -> Result<RunSummary, LoopError> {
    write_manifest(dir, "phase-a", rt)?;
    let export = dir.join(PHASE_A_FILE);
    Writer::create(&export)?.finish()?;
    let mut selector = if rt.config.selector.enabled {
        Some(Selector::new(embed_corpus(rt), rt.config.selector, rt.config.seed)?)
    } else {
        None
    };
    let mut summary = RunSummary::default();
    for it in 0..rt.config.steps {
        if it > 0 {
            if let Some(s) = selector.as_mut() {
                s.advance_round()?;
            }
        }
        let out = phase_a_iteration(rt, it, selector.as_mut()).await?;
        export_batch(&out.records, &export)?;
        if let Some(s) = selector.as_mut() {
            s.last_proposer_mean = Some(out.proposer_mean);
            s.feedback(&out.feedback, run_score(out.proposer_mean, s.last_solver_mean))?;
        }
        summary.add(&out.records);
        info!(iteration = it, mean_reward = out.proposer_mean, "proposer iteration done");
    }
    if let Some(s) = &selector {
        s.save(&dir.join(SELECTOR_FILE))?;
    }
    summary.single_turn_decodes = rt.gateway.counters().single_turn_decodes;
    Ok(summary)
}

/// `steps` solver iterations exported to `dir/phase_b.jsonl`.
pub async fn run_phase_b(rt: &Runtime, dataset: &[DatasetRow], dir: &Path) -> Result<RunSummary, LoopError> {
    write_manifest(dir, "phase-b", rt)?;
    let export = dir.join(PHASE_B_FILE);
    Writer::create(&export)?.finish()?;
    let mut summary = RunSummary::default();
    for it in 0..rt.config.steps {
        let records = phase_b_iteration(rt, dataset, it).await?;
        export_batch(&records, &export)?;
        summary.add(&records);
        info!(iteration = it, "solver iteration done");
    }
    Ok(summary)
}
