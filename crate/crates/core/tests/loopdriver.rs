mod common;

use std::collections::HashMap;

use verispan_core::advantage::mean_std;
use verispan_core::dataset::DatasetRow;
use verispan_core::loopdriver::{
    export_batch, generate_solver_dataset, phase_a_iteration, phase_b_iteration, read_batch, run_phase_a, Components,
    EndpointConfig, LoopError, Runtime,
};
use verispan_core::policy::RetryPolicy;
use verispan_core::simcheck::{Scenario, SimPolicy};
use verispan_core::textkit::{is_valid_pair, is_verbatim_span};

fn by_group(records: &[verispan_core::loopdriver::TrainingRecord]) -> HashMap<String, Vec<f64>> {
    let mut groups: HashMap<String, Vec<f64>> = HashMap::new();
    for r in records.iter().filter(|r| !r.failed) {
        groups.entry(r.group_key.clone()).or_default().push(r.advantage.unwrap());
    }
    groups
}

#[tokio::test]
async fn small_batch_standardizes_per_hop() {
    let rt = common::runtime(common::config(Scenario::AlwaysValid, 4, 11));
    let out = phase_a_iteration(&rt, 0, None).await.unwrap();
    assert_eq!(out.records.len(), 4);
    for (key, adv) in by_group(&out.records) {
        let (mean, _) = mean_std(&adv);
        assert!(mean.abs() < 1e-9, "{key}: {adv:?}");
    }
    assert!(out.records.iter().all(|r| r.valid));
}

#[tokio::test]
async fn invalid_rollouts_earn_half_format() {
    let rt = common::runtime(common::config(Scenario::AnswerLeak, 16, 2));
    let out = phase_a_iteration(&rt, 0, None).await.unwrap();
    for r in &out.records {
        assert!(!r.valid && !r.failed);
        let Components::Proposer { fmt, dz, v_hat, brev, solver_hits } = r.components else { panic!() };
        assert_eq!(r.reward, 0.5 * fmt);
        assert_eq!((dz, v_hat, brev, solver_hits), (0.0, 0.0, 0.0, None));
        assert!(!is_valid_pair(&r.question, &r.answer));
    }
    // Every leak rollout has the same format score, so each hop group is constant.
    assert!(out.records.iter().all(|r| r.advantage == Some(0.0)));
    assert_eq!(rt.gateway.counters().single_turn_decodes, 0);
}

#[tokio::test]
async fn malformed_output_scores_zero() {
    let rt = common::runtime(common::config(Scenario::Malformed, 8, 2));
    let out = phase_a_iteration(&rt, 0, None).await.unwrap();
    assert!(out.records.iter().all(|r| r.reward == 0.0 && !r.valid));
}

#[tokio::test]
async fn tool_loop_hits_turn_limit() {
    let rt = common::runtime(common::config(Scenario::ToolLoop, 4, 2));
    let out = phase_a_iteration(&rt, 0, None).await.unwrap();
    for r in &out.records {
        assert_eq!(r.transcript.assistant_turns().count(), 5);
        assert!(!r.valid);
    }
}

#[tokio::test]
async fn verifier_decodes_scale_with_valid_rollouts() {
    let rt = common::runtime(common::config(Scenario::Mixed(0.5), 24, 5));
    let out = phase_a_iteration(&rt, 0, None).await.unwrap();
    let valid = out.records.iter().filter(|r| r.valid).count();
    assert!(valid > 0 && valid < 24);
    assert_eq!(rt.gateway.counters().single_turn_decodes, 10 * valid);
}

#[tokio::test]
async fn valid_rewards_follow_the_weighted_sum() {
    let rt = common::runtime(common::config(Scenario::AlwaysValid, 16, 8));
    let out = phase_a_iteration(&rt, 0, None).await.unwrap();
    for r in out.records.iter().filter(|r| r.valid) {
        let Components::Proposer { fmt, dz, v_hat, brev, .. } = r.components else { panic!() };
        assert!((r.reward - (0.5 * fmt + dz + 0.5 * v_hat + 0.1 * brev)).abs() <= 1e-12);
        assert!(is_verbatim_span(&r.evidence, &[rt.index.find(r.doc_id.as_deref().unwrap()).unwrap().text.as_str()]));
    }
}

#[tokio::test]
async fn selector_drives_sampling_when_enabled() {
    let mut cfg = common::config(Scenario::AlwaysValid, 8, 4);
    cfg.selector.enabled = true;
    cfg.selector.k0 = 3;
    cfg.steps = 2;
    let rt = common::runtime(cfg);
    let dir = tempfile::tempdir().unwrap();
    let summary = run_phase_a(&rt, dir.path()).await.unwrap();
    assert_eq!(summary.records, 16);
    let records = read_batch(&dir.path().join("phase_a.jsonl")).unwrap();
    assert!(records.iter().all(|r| r.cluster.is_some() && r.task_type.is_some()));
    assert!(dir.path().join("selector.json").exists());
}

#[tokio::test]
async fn repeated_runs_export_identical_bytes() {
    let mut files = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    for run in 0..2 {
        let mut cfg = common::config(Scenario::Mixed(0.7), 16, 21);
        cfg.steps = 2;
        let rt = common::runtime(cfg);
        let out = dir.path().join(format!("run{run}"));
        run_phase_a(&rt, &out).await.unwrap();
        files.push((
            std::fs::read(out.join("phase_a.jsonl")).unwrap(),
            std::fs::read(out.join("manifest.json")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
}

fn unreachable_runtime(batch: usize) -> Runtime {
    let mut cfg = common::config(Scenario::AlwaysValid, batch, 1);
    cfg.endpoints.proposer = EndpointConfig::Http {
        url: "http://127.0.0.1:9/v1/chat/completions".into(),
        model: "none".into(),
        api_key_env: None,
    };
    cfg.retry = RetryPolicy { max_attempts: 2, base_delay_ms: 1, max_delay_ms: 1 };
    common::runtime(cfg)
}

#[tokio::test]
async fn majority_failure_aborts() {
    let rt = unreachable_runtime(4);
    match phase_a_iteration(&rt, 0, None).await {
        Err(LoopError::TooManyFailures { failed: 4, total: 4, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_secret_is_reported() {
    let mut cfg = common::config(Scenario::AlwaysValid, 4, 1);
    cfg.endpoints.judge = EndpointConfig::Http {
        url: "http://127.0.0.1:9".into(),
        model: "j".into(),
        api_key_env: Some("VERISPAN_TEST_KEY_THAT_IS_NOT_SET".into()),
    };
    assert!(matches!(
        Runtime::build(cfg, common::index(), std::iter::empty()),
        Err(LoopError::MissingSecret(_))
    ));
}

#[tokio::test]
async fn generated_triples_pass_filters() {
    let mut cfg = common::config(Scenario::Mixed(0.6), 1, 3);
    cfg.samples_per_prompt = 5;
    let rt = common::runtime(cfg);
    let (rows, stats) = generate_solver_dataset(&rt, 10).await.unwrap();
    assert_eq!(stats.rollouts, 50);
    assert_eq!(stats.kept, rows.len());
    assert_eq!(stats.valid, stats.kept + stats.duplicates + stats.not_verbatim);
    for r in &rows {
        assert!(is_valid_pair(&r.question, &r.answer));
        let doc = rt.index.find(r.doc_id.as_deref().unwrap()).unwrap();
        assert!(is_verbatim_span(&r.evidence, &[doc.text.as_str()]));
    }
    let mut pairs: Vec<_> = rows.iter().map(|r| (&r.question, &r.answer)).collect();
    pairs.sort();
    pairs.dedup();
    assert_eq!(pairs.len(), rows.len());
}

#[tokio::test]
async fn validity_rate_matches_binomial_expectation() {
    // 10 prompts x 5 samples at 60% validity: 30 valid rollouts expected.
    // Over 40 seeds the mean has standard error sqrt(50 * 0.24 / 40) ~ 0.55.
    let seeds = 40;
    let mut total = 0usize;
    for seed in 0..seeds {
        let rt = common::runtime(common::config(Scenario::Mixed(0.6), 1, seed));
        let (_, stats) = generate_solver_dataset(&rt, 10).await.unwrap();
        total += stats.valid;
    }
    let mean = total as f64 / seeds as f64;
    assert!((mean - 30.0).abs() < 6.0 * 0.55, "{mean}");
}

#[tokio::test]
async fn zero_valid_triples_is_an_error() {
    let rt = common::runtime(common::config(Scenario::AnswerLeak, 1, 3));
    assert!(matches!(
        generate_solver_dataset(&rt, 4).await,
        Err(LoopError::NoValidTriples { attempts: 20 })
    ));
}

async fn solver_batch(policy: SimPolicy, rows: Vec<DatasetRow>, seed: u64) -> Vec<verispan_core::loopdriver::TrainingRecord> {
    let mut cfg = common::config(Scenario::AlwaysValid, 64, seed);
    cfg.mock.policy = policy;
    let answers: Vec<_> = rows.iter().map(|r| (r.question.clone(), r.answer.clone(), r.evidence.clone())).collect();
    let rt = Runtime::build(cfg, common::index(), answers).unwrap();
    phase_b_iteration(&rt, &rows, 0).await.unwrap()
}

#[tokio::test]
async fn solver_groups_and_rewards() {
    let rows = vec![
        DatasetRow::new("Who built the tower for the fair?", "Eiffel", "Gustave Eiffel's company designed and built"),
        DatasetRow::new("Which mould killed bacteria?", "Penicillium", "a mould called Penicillium killed"),
    ];
    let records = solver_batch(SimPolicy { p: 1.0, p_plus: 1.0 }, rows.clone(), 13).await;
    assert_eq!(records.len(), 10);
    for r in &records {
        assert_eq!(r.reward, 1.3);
        assert_eq!(r.advantage, Some(0.0));
        let gold = rows.iter().find(|g| g.question == r.question).unwrap();
        assert_eq!(r.evidence, gold.evidence);
    }

    let records = solver_batch(SimPolicy { p: 0.0, p_plus: 0.0 }, rows, 13).await;
    assert!(records.iter().all(|r| r.reward == 0.0 && r.advantage == Some(0.0)));
}

#[tokio::test]
async fn single_correct_rollout_gets_the_only_positive_advantage() {
    let row = DatasetRow::new("Which river drains northern Brazil?", "Amazon", "The Amazon carries more water");
    // Scan seeds for a group with exactly one hit (probability 0.41 per seed at p = 0.2).
    for seed in 0..20 {
        let records = solver_batch(SimPolicy { p: 0.2, p_plus: 0.2 }, vec![row.clone()], seed).await;
        let hits: Vec<bool> = records.iter().map(|r| r.reward > 1.0).collect();
        if hits.iter().filter(|h| **h).count() == 1 {
            for (r, hit) in records.iter().zip(hits) {
                assert_eq!(r.advantage.unwrap() > 0.0, hit);
            }
            return;
        }
    }
    panic!("no single-hit group found");
}

#[tokio::test]
async fn export_round_trips_two_iterations() {
    let rt = common::runtime(common::config(Scenario::Mixed(0.5), 6, 17));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.jsonl");
    let first = phase_a_iteration(&rt, 0, None).await.unwrap().records;
    let second = phase_a_iteration(&rt, 1, None).await.unwrap().records;
    export_batch(&first, &path).unwrap();
    export_batch(&second, &path).unwrap();
    let back = read_batch(&path).unwrap();
    assert_eq!(back, [first, second].concat());
    assert_eq!(back.iter().filter(|r| r.iteration == 1).count(), 6);
}

#[test]
fn unwritable_export_path_fails_first() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no/such/dir/out.jsonl");
    assert!(export_batch(&[], &missing).is_err());
}
