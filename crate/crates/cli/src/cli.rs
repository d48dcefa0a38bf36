//! Command-line definition and config resolution.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ghar_core::config::{EngineConfig, CONFIG_ENV_VAR};
use ghar_core::rl::CriticTarget;
use ghar_core::tasks::TaskKind;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "ghar",
    version,
    about = "Hierarchical agentic graph-RAG engine for clinical prediction"
)]
pub struct Cli {
    /// Config file (JSON); defaults to $GHAR_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic knowledge-graph TSV.
    GenKg(GenKgArgs),
    /// Generate a synthetic patient cohort (JSON Lines).
    GenCohort(GenCohortArgs),
    /// Validate a triple TSV and export the meta-path catalog.
    Ingest(IngestArgs),
    /// Build partition vector indexes (all, or selected meta-paths).
    Index(IndexArgs),
    /// Run episodes over a cohort and write trajectories.
    Run(RunArgs),
    /// Compute metrics from a trajectory file.
    Eval(EvalArgs),
    /// Compute advantages and PPO losses from a trajectory file.
    Score(ScoreArgs),
    /// Pretty-print one logged episode.
    Replay(ReplayArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenKgArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 40)]
    pub diseases: usize,
    #[arg(long, default_value_t = 20)]
    pub procedures: usize,
    #[arg(long, default_value_t = 30)]
    pub drugs: usize,
    #[arg(long, default_value_t = 15)]
    pub proteins: usize,
}

#[derive(Debug, Args)]
pub struct GenCohortArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub patients: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dec_prevalence: f64,
    #[arg(long, default_value_t = 0.5)]
    pub readmit_rate: f64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Triple TSV (overrides paths.kg_tsv).
    #[arg(long)]
    pub kg: Option<PathBuf>,
    /// Catalog JSON output (overrides paths.catalog_json); stdout if unset.
    #[arg(long)]
    pub catalog_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub kg: Option<PathBuf>,
    /// Output directory (overrides paths.index_dir).
    #[arg(long)]
    pub index_dir: Option<PathBuf>,
    /// Meta-paths to build: a catalog index or "head,relation,tail".
    /// Builds everything when omitted.
    #[arg(long = "meta-path")]
    pub meta_paths: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Trajectory output file (overrides paths.trajectories).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which split to run: all | train | val | test.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Cap the number of episodes.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Metrics JSON output; stdout if unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict to a patient group: comma-separated ids, or @file with one
    /// id per line.
    #[arg(long)]
    pub patients: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Score JSON Lines output; stdout if unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the critic target frozen in the trajectories.
    #[arg(long)]
    pub critic_target: Option<CriticTargetArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum CriticTargetArg {
    RewardToGo,
    Immediate,
}

impl From<CriticTargetArg> for CriticTarget {
    fn from(v: CriticTargetArg) -> Self {
        match v {
            CriticTargetArg::RewardToGo => CriticTarget::RewardToGo,
            CriticTargetArg::Immediate => CriticTarget::Immediate,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Episode id to print.
    #[arg(long, conflicts_with = "index")]
    pub episode: Option<String>,
    /// 0-based line index to print.
    #[arg(long)]
    pub index: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub addr: String,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse()
}

/// Resolve the engine config: `--config` flag, then `$GHAR_CONFIG`, then
/// built-in defaults.
pub fn resolve_config(flag: Option<&PathBuf>) -> Result<EngineConfig, CliError> {
    if let Some(path) = flag {
        return Ok(EngineConfig::load(path)?);
    }
    if let Ok(env_path) = std::env::var(CONFIG_ENV_VAR) {
        if !env_path.is_empty() {
            return Ok(EngineConfig::load(std::path::Path::new(&env_path))?);
        }
    }
    Ok(EngineConfig::default())
}
