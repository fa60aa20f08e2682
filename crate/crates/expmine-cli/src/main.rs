//! `expmine` — mine hierarchical experience from rollout trajectories and
//! serve it back into experience-aligned search episodes.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use expmine::Error;

#[derive(Parser)]
#[command(
    name = "expmine",
    version,
    about = "Experience mining and serving for tool-calling search agents",
    long_about = None
)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true, default_value = "expmine.toml")]
    config: PathBuf,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Force every client into its deterministic offline mock.
    #[arg(long, global = true)]
    mock: bool,

    /// Validate configuration and inputs, touch nothing.
    #[arg(long, global = true)]
    dry_run: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill case experiences from a rollout trajectory file.
    Distill {
        /// Trajectory file to read (overrides paths.trajectories).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Experience file to write (overrides paths.experiences).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cluster and summarize experiences into a leveled base.
    BuildHek {
        /// Experience file to read (overrides paths.experiences).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Base directory to write (overrides paths.hek_dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sample K experience-aligned rollouts per dataset question.
    Rollout {
        /// Dataset file (overrides paths.dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Trajectory file to write (overrides paths.trajectories).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Experience base directory (overrides paths.hek_dir).
        #[arg(long)]
        hek_dir: Option<PathBuf>,
        /// Rollouts per question (overrides rollout.k).
        #[arg(long)]
        k: Option<usize>,
        /// Run without any experience base.
        #[arg(long)]
        no_hek: bool,
    },
    /// Score a trajectory file against a dataset.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Trajectory file to score (overrides paths.trajectories).
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// Report file to write (overrides paths.report).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also collect 0-5 judge scores via the chat client.
        #[arg(long)]
        judge: bool,
    },
    /// Reference numerics for token-sequence groups (objective + diagnostics).
    GrpoCheck {
        /// Group file to read (overrides paths.grpo_input).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Record file to write; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Query the experience base: argmax entry plus filtered cases.
    Retrieve {
        #[arg(long)]
        query: String,
        /// Restrict the argmax to these levels, e.g. "1,2". Default: all.
        #[arg(long)]
        levels: Option<String>,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long)]
        hek_dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = if cli.config.exists() {
        PipelineConfig::load(&cli.config)?
    } else if cli.config == PathBuf::from("expmine.toml") {
        // the default path may simply not exist; run on built-in defaults
        PipelineConfig::default()
    } else {
        return Err(Error::Config(format!(
            "config file {} does not exist",
            cli.config.display()
        )));
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.mock {
        cfg.force_mock();
    }
    cfg.resolve_seeds();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, Error> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Distill { input, output } => {
            if input.is_some() {
                cfg.paths.trajectories = input.clone();
            }
            if output.is_some() {
                cfg.paths.experiences = output.clone();
            }
            commands::cmd_distill(&cfg, cli.dry_run)
        }
        Command::BuildHek { input, out_dir } => {
            if input.is_some() {
                cfg.paths.experiences = input.clone();
            }
            if out_dir.is_some() {
                cfg.paths.hek_dir = out_dir.clone();
            }
            commands::cmd_build_hek(&cfg, cli.dry_run)
        }
        Command::Rollout {
            dataset,
            output,
            hek_dir,
            k,
            no_hek,
        } => {
            if dataset.is_some() {
                cfg.paths.dataset = dataset.clone();
            }
            if output.is_some() {
                cfg.paths.trajectories = output.clone();
            }
            if hek_dir.is_some() {
                cfg.paths.hek_dir = hek_dir.clone();
            }
            if let Some(k) = k {
                if *k == 0 {
                    return Err(Error::Config("rollout.k must be >= 1".into()));
                }
                cfg.rollout.k = *k;
            }
            commands::cmd_rollout(&cfg, *no_hek, cli.dry_run)
        }
        Command::Eval {
            dataset,
            trajectories,
            report,
            judge,
        } => {
            if dataset.is_some() {
                cfg.paths.dataset = dataset.clone();
            }
            if trajectories.is_some() {
                cfg.paths.trajectories = trajectories.clone();
            }
            if report.is_some() {
                cfg.paths.report = report.clone();
            }
            commands::cmd_eval(&cfg, *judge, cli.dry_run)
        }
        Command::GrpoCheck { input, output } => {
            if input.is_some() {
                cfg.paths.grpo_input = input.clone();
            }
            if output.is_some() {
                cfg.paths.grpo_output = output.clone();
            }
            commands::cmd_grpo_check(&cfg, cli.dry_run)
        }
        Command::Retrieve {
            query,
            levels,
            top_k,
            hek_dir,
        } => {
            if hek_dir.is_some() {
                cfg.paths.hek_dir = hek_dir.clone();
            }
            let levels = match levels {
                None => Vec::new(),
                Some(spec) => spec
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<u32>()
                            .map_err(|_| Error::Config(format!("bad level `{s}` in --levels")))
                    })
                    .collect::<Result<Vec<u32>, Error>>()?,
            };
            commands::cmd_retrieve(&cfg, query, &levels, *top_k, cli.dry_run)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) | Error::Io { .. } => 2u8,
                _ => 1u8,
            };
            ExitCode::from(code)
        }
    }
}
