use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use tokio::net::TcpListener;
use tracing_subscriber::EnvFilter;

use verispan_core::dataset::{read_dataset, write_dataset};
use verispan_core::eval::{evaluate, write_report, EvalOptions};
use verispan_core::loopdriver::{
    generate_solver_dataset, run_phase_a, run_phase_b, write_manifest, RunConfig, Runtime,
};
use verispan_core::retrieval::{self, Index};
use verispan_core::simcheck::{
    check_lemma1, check_maximizer, check_prop1, default_grid, Lemma1Report, MaximizerRow, MockEndpoint, Prop1Report,
};

#[derive(Parser)]
#[command(name = "verispan", version, about = "Self-play search-agent rewards, rollouts and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a line-delimited corpus.
    Index { corpus: PathBuf, out: PathBuf },
    /// Run proposer iterations and export scored batches.
    PhaseA {
        #[arg(long)]
        config: PathBuf,
    },
    /// Roll out the proposer over `count` prompts and keep valid triples.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: usize,
        /// Defaults to `<output>/dataset.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run solver iterations over a generated dataset.
    PhaseB {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a solver on a question-answering dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Monte-Carlo checks of the reward identities.
    Simcheck {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "simcheck.json")]
        out: PathBuf,
    },
    /// Expose an index over HTTP.
    ServeSearch {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8090")]
        addr: SocketAddr,
    },
    /// Expose the simulated policy as a chat-completion endpoint.
    ServeMock {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8091")]
        addr: SocketAddr,
    },
}

#[derive(Serialize)]
struct SimcheckReport {
    lemma1: Lemma1Report,
    maximizer: Vec<MaximizerRow>,
    prop1: Prop1Report,
}

fn runtime(config: &Path) -> Result<Runtime> {
    let config = RunConfig::load(config)?;
    let index = config.load_index()?;
    Ok(Runtime::build(config, Arc::new(index), std::iter::empty())?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn simcheck(trials: usize, seed: u64, out: &Path) -> Result<()> {
    let report = SimcheckReport {
        lemma1: check_lemma1(&default_grid(), 5, trials, seed)?,
        maximizer: check_maximizer(&(2..=10).collect::<Vec<_>>(), 1e-4)?,
        prop1: check_prop1(0.7, 0.3, 5, trials / 2, seed)?,
    };
    println!("{}\n", report.lemma1);
    println!("{:>4} {:>12} {:>12} {:>10}", "n", "grid argmax", "closed form", "gap");
    for r in &report.maximizer {
        println!("{:>4} {:>12.4} {:>12.6} {:>10.2e}", r.n, r.grid_argmax, r.closed_form, r.gap);
    }
    println!("\n{}", report.prop1);
    write_json(out, &report)
}

async fn run(command: Command) -> Result<()> {
    match command {
        Command::Index { corpus, out } => {
            let index = retrieval::ingest(&corpus)?;
            index.save(&out)?;
            println!("indexed {} documents into {}", index.len(), out.display());
        }
        Command::PhaseA { config } => {
            let rt = runtime(&config)?;
            let summary = run_phase_a(&rt, &rt.config.paths.output).await?;
            print_json(&summary)?;
        }
        Command::Generate { config, count, out } => {
            let rt = runtime(&config)?;
            let dir = &rt.config.paths.output;
            write_manifest(dir, "generate", &rt)?;
            let (rows, stats) = generate_solver_dataset(&rt, count).await?;
            let out = out.unwrap_or_else(|| dir.join("dataset.jsonl"));
            write_dataset(&out, &rows)?;
            print_json(&stats)?;
        }
        Command::PhaseB { config, dataset } => {
            let rt = runtime(&config)?;
            let rows = read_dataset(&dataset)?;
            let summary = run_phase_b(&rt, &rows, &rt.config.paths.output).await?;
            print_json(&summary)?;
        }
        Command::Eval { config, dataset } => {
            let rt = runtime(&config)?;
            let rows = read_dataset(&dataset)?;
            let dir = &rt.config.paths.output;
            write_manifest(dir, "eval", &rt)?;
            let opts = EvalOptions {
                limits: rt.config.limits,
                sampling: rt.config.sampling.eval,
                parallelism: rt.config.parallelism,
                seed: rt.config.seed,
            };
            let (summary, records) = evaluate(&rows, &rt.gateway, &rt.search, opts).await?;
            write_report(dir, &summary, &records)?;
            print_json(&summary)?;
        }
        Command::Simcheck { trials, seed, out } => simcheck(trials, seed, &out)?,
        Command::ServeSearch { index, addr } => {
            let index = Arc::new(Index::load(&index)?);
            let listener = TcpListener::bind(addr).await?;
            println!("listening on {}", listener.local_addr()?);
            retrieval::server::serve(listener, index).await?;
        }
        Command::ServeMock { config, addr } => {
            let config = RunConfig::load(&config)?;
            let index = match config.load_index() {
                Ok(i) => Some(Arc::new(i)),
                Err(_) if config.paths.index.is_none() && config.paths.corpus.is_none() => None,
                Err(e) => bail!(e),
            };
            let endpoint = Arc::new(MockEndpoint::new(config.mock, index));
            let listener = TcpListener::bind(addr).await?;
            println!("listening on {}", listener.local_addr()?);
            verispan_core::simcheck::server::serve(listener, endpoint).await?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    run(Cli::parse().command).await
}
