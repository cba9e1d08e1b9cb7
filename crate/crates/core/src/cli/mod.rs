//! The `afgen` command line: argument parsing, configuration resolution and
//! the command implementations. Every command writes its outputs and a
//! `<command>.manifest.json` into `--out-dir`.

mod commands;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod manifest;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::integrate::SampleVariant;
use crate::likelihood::{ModelVariant, ProbeDist, ProposalKind};
use crate::payoff::Context;

pub use config::RunConfig;
pub use dataset::Dataset;
pub use manifest::RunManifest;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "AFGEN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "afgen", version, about = "Generative assignment flows for discrete joint distributions")]
pub struct Cli {
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "afgen-out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a payoff model on a labeled dataset.
    Train(TrainArgs),
    /// Draw configurations from a trained model.
    Sample(SampleArgs),
    /// Compare a sample histogram with a known joint distribution.
    EvalKl(EvalKlArgs),
    /// Train and evaluate on random factorizing targets for several class counts.
    ClassScaling(ClassScalingArgs),
    /// Estimate per-datum log-likelihoods of a test set.
    Likelihood(LikelihoodArgs),
    /// Dense brute-force operations on small joint distributions.
    Oracle(OracleArgs),
}

#[derive(Debug, Default, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub time_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub context: Option<Context>,
    #[arg(long)]
    pub node_id: Option<bool>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub final_lr_fraction: Option<f64>,
    #[arg(long)]
    pub lambda_rate: Option<f64>,
    #[arg(long)]
    pub time_dist_rate: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct IntegratorFlags {
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    #[arg(long)]
    pub h_init: Option<f64>,
    #[arg(long)]
    pub h_min: Option<f64>,
    #[arg(long)]
    pub h_max: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Always integrate up to `t_max`.
    #[arg(long)]
    pub no_early_exit: bool,
}

#[derive(Debug, Default, Args)]
pub struct SampleFlags {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<SampleVariant>,
    /// Also write the final chart states to `chart_states.afgx`.
    #[arg(long)]
    pub chart_states: bool,
}

#[derive(Debug, Default, Args)]
pub struct LikelihoodFlags {
    #[arg(long)]
    pub num_proposal_samples: Option<usize>,
    #[arg(long)]
    pub num_hutchinson: Option<usize>,
    #[arg(long, value_enum)]
    pub hutchinson_dist: Option<ProbeDist>,
    #[arg(long, value_enum)]
    pub proposal: Option<ProposalKind>,
    #[arg(long)]
    pub proposal_sigma: Option<f64>,
    #[arg(long)]
    pub pilot_samples: Option<usize>,
    #[arg(long)]
    pub proposal_center_time: Option<f64>,
    #[arg(long, value_enum)]
    pub model_variant: Option<ModelVariant>,
    /// Path speed the model was trained with.
    #[arg(long)]
    pub lambda_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset with header `# n=<n> c=<c>`.
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub sample: SampleFlags,
    #[command(flatten)]
    pub integrator: IntegratorFlags,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["samples", "checkpoint"])))]
pub struct EvalKlArgs {
    /// Target joint distribution (`AFGJ`).
    #[arg(long)]
    pub target: PathBuf,
    /// Sample file, one configuration per line.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Draw fresh samples from this model instead.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub sample: SampleFlags,
    #[command(flatten)]
    pub integrator: IntegratorFlags,
}

#[derive(Debug, Args)]
pub struct ClassScalingArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sample_counts: Option<Vec<usize>>,
    #[arg(long)]
    pub dirichlet_alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub variant: Option<SampleVariant>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub integrator: IntegratorFlags,
}

#[derive(Debug, Args)]
pub struct LikelihoodArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test configurations with header `# n=<n> c=<c>`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub likelihood: LikelihoodFlags,
    #[command(flatten)]
    pub integrator: IntegratorFlags,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(subcommand)]
    pub op: OracleOp,
}

#[derive(Debug, Subcommand)]
pub enum OracleOp {
    /// Print `T(W)` for a row-major assignment matrix.
    Embed {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: usize,
        /// `n·c` probabilities, comma or space separated.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Print the per-node marginals of a joint.
    Marginalize {
        #[arg(long)]
        joint: PathBuf,
    },
    /// Print the entropy (nats) of a joint.
    Entropy {
        #[arg(long)]
        joint: PathBuf,
    },
    /// Print `KL(p, q)` in nats.
    Kl {
        #[arg(long)]
        p: PathBuf,
        #[arg(long)]
        q: PathBuf,
    },
    /// Print the factorizing projection of a strictly positive joint.
    #[command(name = "proj-t")]
    ProjT {
        #[arg(long)]
        joint: PathBuf,
        /// Also write `T(proj_T(q))` as a joint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a joint from explicit probabilities.
    WriteJoint {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: usize,
        /// `c^n` probabilities in lexicographic order, last node fastest.
        #[arg(long, allow_hyphen_values = true)]
        probs: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw an exact sample dataset from a joint.
    Sample {
        #[arg(long)]
        joint: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Sizes the global worker pool from `AFGEN_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Runs one parsed invocation, writing human-readable results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    commands::dispatch(cli, cfg, out)
}

/// Parses `args` (including the program name) and runs them.
pub fn run_from_args<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(&cli, out)
}

/// Process exit status for an error: 2 for usage and configuration
/// problems, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Empty(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}
