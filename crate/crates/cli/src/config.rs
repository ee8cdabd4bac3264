use std::path::{Path, PathBuf};

use relaynet::baseline::Grading;
use relaynet::dqn::AgentHyperparams;
use relaynet::env::EpisodeConfig;
use relaynet::feeder::{build_feeder_section, topology_from_toml, FeederTopology, RelayId};
use relaynet::server::DEFAULT_PORT;
use relaynet::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const BUILTIN_TOPOLOGY: &str = "builtin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Episodes per scenario.
    pub episodes: usize,
    /// Episodes per response-time role.
    pub response_episodes: usize,
    pub sweep_episodes: usize,
    pub sweep_max_percent: f64,
    pub sweep_step_percent: f64,
    /// Relay whose failure rate the sweeps track.
    pub focus_relay: u32,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: 1000,
            response_episodes: 1000,
            sweep_episodes: 300,
            sweep_max_percent: 15.0,
            sweep_step_percent: 1.0,
            focus_relay: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    /// Sampling episodes for the current distributions.
    pub episodes: usize,
    /// Weight of the faulty class at the density crossing.
    pub weight_faulty: f64,
    pub grading: Grading,
    /// Grid points per relay in the density export.
    pub density_points: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            episodes: 500,
            weight_faulty: 3.0,
            grading: Grading::default(),
            density_points: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub bind: String,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            bind: format!("127.0.0.1:{DEFAULT_PORT}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; required by every command except `serve` and `config`.
    pub seed: Option<u64>,
    /// `builtin` or a topology TOML path, relative to the config file.
    pub topology: String,
    pub output_dir: PathBuf,
    pub episode: EpisodeConfig,
    pub agent: AgentHyperparams,
    pub training: TrainerConfig,
    pub evaluation: EvalSettings,
    pub baseline: BaselineSettings,
    pub server: ServerSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            topology: BUILTIN_TOPOLOGY.into(),
            output_dir: PathBuf::from("relaynet-out"),
            episode: EpisodeConfig::default(),
            agent: AgentHyperparams::default(),
            training: TrainerConfig::default(),
            evaluation: EvalSettings::default(),
            baseline: BaselineSettings::default(),
            server: ServerSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.topology != BUILTIN_TOPOLOGY {
            let t = base.join(&cfg.topology);
            if !t.is_file() {
                return Err(CliError::Usage(format!("topology file {} does not exist", t.display())));
            }
            cfg.topology = t.to_string_lossy().into_owned();
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.episode.validate().map_err(usage)?;
        self.agent.validate().map_err(usage)?;
        self.training.validate().map_err(usage)?;
        let e = &self.evaluation;
        if e.episodes == 0 || e.response_episodes == 0 || e.sweep_episodes == 0 {
            return Err(CliError::Usage("evaluation episode counts must be positive".into()));
        }
        if self.baseline.episodes < 2 || !(self.baseline.weight_faulty >= 1.0) {
            return Err(CliError::Usage(
                "baseline needs at least 2 episodes and a faulty-class weight of at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Defaults as TOML, with the seed line the user must fill in.
    pub fn defaults_toml() -> String {
        let body = toml::to_string(&Self::default()).expect("defaults serialize");
        format!("# required by train, eval, baseline, sweep and trace\n# seed = 7\n\n{body}")
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("a seed is required: set `seed` in the config or pass --seed".into()))
    }

    pub fn topology(&self) -> Result<FeederTopology, CliError> {
        if self.topology == BUILTIN_TOPOLOGY {
            return Ok(build_feeder_section());
        }
        let text = std::fs::read_to_string(&self.topology)
            .map_err(|e| CliError::Usage(format!("cannot read topology {}: {e}", self.topology)))?;
        topology_from_toml(&text).map_err(usage)
    }

    pub fn focus_relay(&self) -> RelayId {
        RelayId(self.evaluation.focus_relay)
    }
}

fn usage(e: relaynet::Error) -> CliError {
    CliError::Usage(e.to_string())
}
