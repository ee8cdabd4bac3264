//! `relaynet` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config, missing inputs. Exit code 1.
    #[error("{0}")]
    Usage(String),

    /// Failure while doing the work. Exit code 2.
    #[error(transparent)]
    Runtime(#[from] relaynet::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "relaynet", version, about = "Nested DQN relay protection on a radial feeder")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Peak,
    Mean,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Trained models from the models directory.
    Models,
    /// Fitted overcurrent thresholds.
    Baseline,
    /// Ideal actions from the hidden episode state.
    Oracle,
    /// Every relay holds.
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    LocalFault,
    Backup,
    RemoteFault,
    NoFault,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one DQN per relay, leaves first.
    Train {
        /// Episodes per relay, overriding the config.
        #[arg(long)]
        episodes: Option<usize>,
        /// Independent runs, overriding the config.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Failure rates, sweeps and response times of trained policies.
    Eval {
        /// Model directory [default: <output-dir>/models].
        #[arg(long)]
        models: Option<PathBuf>,
        /// Evaluate the ideal-action oracle instead of trained models.
        #[arg(long)]
        oracle: bool,
        /// Threshold file to compare against [default: <output-dir>/baseline/thresholds.toml, if present].
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Episodes per scenario, overriding the config.
        #[arg(long)]
        episodes: Option<usize>,
        /// Skip the load-stress sweeps.
        #[arg(long)]
        no_sweep: bool,
    },
    /// Fit overcurrent pickup thresholds from sampled currents.
    Baseline {
        /// Sampling episodes, overriding the config.
        #[arg(long)]
        episodes: Option<usize>,
        /// Check crossing recovery on a two-Gaussian fixture first.
        #[arg(long)]
        self_test: bool,
    },
    /// Failure rate of the focus relay under growing load.
    Sweep {
        #[arg(long, value_enum, default_value = "both")]
        axis: AxisArg,
        /// Model directory [default: <output-dir>/models].
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        /// Threshold file [default: <output-dir>/baseline/thresholds.toml, if present].
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Stress step in percent, overriding the config.
        #[arg(long)]
        step: Option<f64>,
        /// Largest stress in percent, overriding the config.
        #[arg(long)]
        max: Option<f64>,
    },
    /// Serve the environment over TCP until interrupted.
    Serve {
        /// Address to bind [default: config, or 127.0.0.1:$RELAYNET_PORT].
        #[arg(long)]
        bind: Option<String>,
    },
    /// Export one seeded episode as CSV.
    Trace {
        #[arg(long, value_enum, default_value = "oracle")]
        policy: PolicyArg,
        /// Build the episode from a scenario instead of the random distribution.
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        /// Test relay for --scenario.
        #[arg(long, default_value_t = 5)]
        relay: u32,
        /// Model directory for --policy models.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Threshold file for --policy baseline.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Write to stdout instead of <output-dir>/traces.
        #[arg(long)]
        stdout: bool,
    },
    /// Inspect configuration.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Debug, Subcommand)]
enum ConfigCommand {
    /// Print every default as TOML.
    ShowDefaults,
    /// Parse and validate a config file.
    Check { path: PathBuf },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Config(c) = &cli.command {
        return match c {
            ConfigCommand::ShowDefaults => {
                print!("{}", RunConfig::defaults_toml());
                Ok(())
            }
            ConfigCommand::Check { path } => {
                RunConfig::load(path)?;
                println!("{}: ok", path.display());
                Ok(())
            }
        };
    }
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Train { episodes, runs } => {
            if let Some(e) = episodes {
                cfg.training.episodes_per_relay = e;
            }
            if let Some(r) = runs {
                cfg.training.runs = r;
            }
            cfg.validate()?;
            commands::train(&cfg)
        }
        Command::Eval {
            models,
            oracle,
            baseline,
            episodes,
            no_sweep,
        } => {
            if let Some(e) = episodes {
                cfg.evaluation.episodes = e;
                cfg.evaluation.response_episodes = e;
            }
            cfg.validate()?;
            commands::eval(&cfg, models, oracle, baseline, !no_sweep)
        }
        Command::Baseline { episodes, self_test } => {
            if let Some(e) = episodes {
                cfg.baseline.episodes = e;
            }
            cfg.validate()?;
            commands::baseline(&cfg, self_test)
        }
        Command::Sweep {
            axis,
            models,
            oracle,
            baseline,
            step,
            max,
        } => {
            if let Some(s) = step {
                cfg.evaluation.sweep_step_percent = s;
            }
            if let Some(m) = max {
                cfg.evaluation.sweep_max_percent = m;
            }
            commands::sweep(&cfg, axis, models, oracle, baseline)
        }
        Command::Serve { bind } => {
            let bind = bind
                .or_else(|| std::env::var("RELAYNET_PORT").ok().map(|p| format!("127.0.0.1:{p}")))
                .unwrap_or_else(|| cfg.server.bind.clone());
            commands::serve(&cfg, &bind)
        }
        Command::Trace {
            policy,
            scenario,
            relay,
            models,
            baseline,
            stdout,
        } => commands::trace(&cfg, policy, scenario, relay, models, baseline, stdout),
        Command::Config(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
