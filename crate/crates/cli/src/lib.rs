//! `l2r`: the experiment runner. Training, evaluation, pattern mining,
//! policy blending, and the two distributed roles (learner, sampler).

pub mod blend;
pub mod ckpt;
pub mod config;
pub mod evalcmd;
pub mod metrics;
pub mod mine;
pub mod servecmd;
pub mod train;

use clap::{Parser, Subcommand};
use l2r_core::error::CoreError;
use l2r_orchestrator::OrchError;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config/arguments; exits 2.
    #[error("{0}")]
    Schema(String),
    /// Unreadable or mismatched checkpoint; exits 4.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Orch(#[from] OrchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn schema(msg: impl Into<String>) -> CliError {
        CliError::Schema(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> CliError {
        CliError::Checkpoint(msg.into())
    }

    pub fn other(msg: impl Into<String>) -> CliError {
        CliError::Other(msg.into())
    }

    /// 2 config, 3 numeric abort, 4 checkpoint, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        fn core_code(e: &CoreError) -> i32 {
            match e {
                CoreError::Config(_) => 2,
                CoreError::Numeric(_) => 3,
                CoreError::Checkpoint(_) => 4,
                _ => 1,
            }
        }
        match self {
            CliError::Schema(_) => 2,
            CliError::Checkpoint(_) => 4,
            CliError::Core(e) => core_code(e),
            CliError::Orch(OrchError::Core(e)) => core_code(e),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "l2r", version, about = "Locomotion RL experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a training experiment in this process.
    Train {
        /// Experiment config (JSON).
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in preset: pku, reason8, dbddpg or anton.
        #[arg(long)]
        preset: Option<String>,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics.csv and checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise-free rollouts of saved policies; writes eval.csv.
    Eval {
        /// Checkpoint stem (expects <stem>_actor.l2r etc). Repeat to form
        /// a pool for ensemble compositions.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Composition such as "A10C10": first X actors, first Y critics
        /// from the pool. Default A1C0 (single actor, no critics).
        #[arg(long)]
        ensemble: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional experiment config supplying the course settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where eval.csv lands; stdout-only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out a saved actor and tabulate thresholded action patterns.
    Mine {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: u32,
        /// Component threshold for the on/off bit.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a fixed or scheduled mix of two saved policies.
    Blend {
        /// Checkpoint stem of the policy weighted by alpha.
        #[arg(long)]
        pi: PathBuf,
        /// Checkpoint stem of the policy weighted by 1 - alpha.
        #[arg(long)]
        eta: PathBuf,
        /// Fixed mixing weight in [0,1].
        #[arg(long, conflicts_with = "schedule")]
        alpha: Option<f64>,
        /// Hand-over horizon n: step k plays (1-k/n) eta + (k/n) pi.
        #[arg(long)]
        schedule: Option<u32>,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the learner: serve weights, ingest episodes, train.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Listen address; overrides the config (env L2R_LEARNER_ADDR
        /// overrides both).
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one sampler against a remote learner.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Learner address; overrides the config (env L2R_LEARNER_ADDR
        /// overrides both).
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Episode budget for this sampler; overrides the config.
        #[arg(long)]
        episodes: Option<u64>,
        /// Send the learner a shutdown request after the last episode.
        #[arg(long, default_value_t = false)]
        shutdown: bool,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, preset, seed, out } => {
            let cfg = load_config(config.as_deref(), preset.as_deref(), seed)?;
            train::cmd_train(&cfg, &out)
        }
        Command::Eval { checkpoints, ensemble, episodes, seed, config, out } => {
            let env = env_settings(config.as_deref())?;
            evalcmd::cmd_eval(&checkpoints, ensemble.as_deref(), episodes, seed, &env, out.as_deref())
        }
        Command::Mine { checkpoint, episodes, threshold, seed, config, out } => {
            let env = env_settings(config.as_deref())?;
            mine::cmd_mine(&checkpoint, episodes, threshold, seed, &env, &out)
        }
        Command::Blend { pi, eta, alpha, schedule, episodes, seed, config, out } => {
            let env = env_settings(config.as_deref())?;
            blend::cmd_blend(&pi, &eta, alpha, schedule, episodes, seed, &env, out.as_deref())
        }
        Command::Serve { config, addr, seed, out } => {
            let cfg = load_config(Some(&config), None, seed)?;
            servecmd::cmd_serve(&cfg, addr.as_deref(), &out)
        }
        Command::Sample { config, addr, seed, episodes, shutdown } => {
            let cfg = load_config(Some(&config), None, seed)?;
            servecmd::cmd_sample(&cfg, addr.as_deref(), episodes, shutdown)
        }
    }
}

fn load_config(
    path: Option<&std::path::Path>,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<config::ExperimentConfig> {
    let mut cfg = match (path, preset) {
        (Some(p), None) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::schema(format!("cannot read {}: {e}", p.display())))?;
            config::ExperimentConfig::from_json(&text)?
        }
        (None, Some(name)) => config::preset(name)?,
        (None, None) => return Err(CliError::schema("pass --config or --preset")),
        (Some(_), Some(_)) => {
            return Err(CliError::schema("--config and --preset are mutually exclusive"))
        }
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn env_settings(path: Option<&std::path::Path>) -> Result<config::EnvSettings> {
    match path {
        None => Ok(config::EnvSettings::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::schema(format!("cannot read {}: {e}", p.display())))?;
            Ok(config::ExperimentConfig::from_json(&text)?.env)
        }
    }
}
