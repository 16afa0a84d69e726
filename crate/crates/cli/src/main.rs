use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "igel", version = output::VERSION, about = "Inductive graph embeddings from local structure")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; falls back to the configuration, then $IGEL_OUT_DIR.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Force the reproducible training schedule.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the sparse structural features of every node.
    Encode(GraphArgs),
    /// Train the embedding matrix with skip-gram negative sampling.
    TrainUnsup(GraphArgs),
    /// Embed the nodes of a graph with a trained matrix.
    Embed(MatrixArgs),
    /// Edge-removal link prediction, reporting held-out AUC.
    LinkPredict(GraphArgs),
    /// Multi-label node classification with a jointly trained head.
    Classify(ClassifyArgs),
    /// k-means on embeddings with modularity model selection, plus
    /// centrality correlations.
    Cluster(MatrixArgs),
    /// Runtime scaling on Erdős–Rényi graphs.
    Bench,
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    /// Edge list; overrides `graph` in the configuration.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Encoding radius; overrides `encoder.alpha`.
    #[arg(long)]
    alpha: Option<u32>,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Matrix written by `train-unsup`.
    #[arg(long)]
    matrix: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Ignore node attributes.
    #[arg(long, conflicts_with = "with_features")]
    graph_only: bool,
    /// Concatenate node attributes to the embeddings.
    #[arg(long)]
    with_features: bool,
}

fn resolve(common: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.derive_seeds();
    if common.deterministic {
        cfg.unsup.parallel_mode = igel::unsup::ParallelMode::Deterministic;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os("IGEL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("igel-out"));
    cfg.out_dir = Some(out.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let (cfg, out) = resolve(&cli.common)?;
    match cli.command {
        Command::Encode(a) => commands::encode(cfg, out, &a),
        Command::TrainUnsup(a) => commands::train_unsup(cfg, out, &a),
        Command::Embed(a) => commands::embed(cfg, out, &a),
        Command::LinkPredict(a) => commands::link_predict(cfg, out, &a),
        Command::Classify(a) => commands::classify(cfg, out, &a),
        Command::Cluster(a) => commands::cluster(cfg, out, &a),
        Command::Bench => commands::bench(cfg, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = output::error_kind(&e);
            eprintln!("igel: {e:#}");
            eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } }));
            ExitCode::from(if kind == "config" { 2 } else { 1 })
        }
    }
}
