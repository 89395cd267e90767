//! The run configuration file.
//!
//! A TOML document with a top-level `version` and five sections. Every key
//! is optional; missing keys take the defaults below, and unknown keys are
//! rejected.
//!
//! ```toml
//! version = 1
//!
//! [physics]          # cart-pole constants, angles in degrees
//! gravity = 9.8
//! cart_mass = 1.0
//! pole_mass = 0.1
//! pole_half_length = 0.5
//! force_magnitude = 10.0
//! timestep = 0.02
//! track_half_length = 20.0
//! fail_angle = 60.0
//! step_cap = 10000
//! reset_linear = 0.05
//! reset_angular = 1.0
//!
//! [agent]            # template for every learning cell
//! learning_rate = 0.01
//! gamma = 0.9
//! epsilon = 0.1
//! observability = "mdp"        # or "pomdp"
//! encoder = "sign_split"       # or "sparse_unary"
//! linear_range = [-20.0, 20.0]
//! angular_range = [-60.0, 60.0]
//! hidden_layers = [32]
//! init_scale = 0.1
//!
//! [rehearsal]        # strategy of the `run` cell; denom_guard applies everywhere
//! strategy = "none"            # "random", "none", "frean_robins", "batch"
//! pseudoset_size = 10
//! relearn_gap = 10
//! denom_guard = 1e-8
//!
//! [sweep]
//! learning_rates = [0.1, 0.01, 0.001]
//! pseudoset_sizes = [10, 30, 50, 100]
//! relearn_gaps = [1, 10, 100]
//! extra_pairs = [[30, 30], [30, 50], [50, 30], [50, 50]]
//! strategies = ["none", "frean_robins", "batch", "random"]
//! observabilities = ["mdp", "pomdp"]
//! encoders = ["sign_split", "sparse_unary"]
//! tries_per_run = 5000
//! replications = 1
//! base_seed = 0
//! success_threshold = 1000
//! comparable_tol = 0.05
//!
//! [output]
//! dir = "results"
//! plots = true
//! plot_cells = []              # cell-id substrings; empty plots every cell
//! ```

use std::path::{Path, PathBuf};

use prlab_core::encoders::{ANGULAR_RANGE, LINEAR_RANGE};
use prlab_core::rehearsal::DEFAULT_DENOM_GUARD;
use prlab_core::{
    AgentConfig, CellSpec, CellStrategy, EncoderKind, Observability, PhysicsParams, Protocol,
    RehearsalConfig, Strategy, SweepSpec,
};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(toml::de::Error),
    #[error("invalid [{section}] section: {message}")]
    Invalid {
        section: &'static str,
        message: String,
    },
}

fn invalid(section: &'static str, err: impl ToString) -> ConfigError {
    let message = err.to_string();
    let message = message
        .strip_prefix("configuration error: ")
        .map(str::to_owned)
        .unwrap_or(message);
    ConfigError::Invalid { section, message }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub physics: PhysicsParams,
    pub agent: AgentSection,
    pub rehearsal: RehearsalSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            physics: PhysicsParams::default(),
            agent: AgentSection::default(),
            rehearsal: RehearsalSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub observability: Observability,
    pub encoder: EncoderKind,
    pub linear_range: (f64, f64),
    pub angular_range: (f64, f64),
    pub hidden_layers: Vec<usize>,
    pub init_scale: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentConfig::default();
        Self {
            learning_rate: a.learning_rate,
            gamma: a.gamma,
            epsilon: a.epsilon,
            observability: a.observability,
            encoder: a.encoder,
            linear_range: LINEAR_RANGE,
            angular_range: ANGULAR_RANGE,
            hidden_layers: a.hidden_layers,
            init_scale: a.init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RehearsalSection {
    pub strategy: CellStrategy,
    pub pseudoset_size: usize,
    pub relearn_gap: usize,
    pub denom_guard: f64,
}

impl Default for RehearsalSection {
    fn default() -> Self {
        Self {
            strategy: CellStrategy::None,
            pseudoset_size: 10,
            relearn_gap: 10,
            denom_guard: DEFAULT_DENOM_GUARD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub learning_rates: Vec<f64>,
    pub pseudoset_sizes: Vec<usize>,
    pub relearn_gaps: Vec<usize>,
    pub extra_pairs: Vec<(usize, usize)>,
    pub strategies: Vec<CellStrategy>,
    pub observabilities: Vec<Observability>,
    pub encoders: Vec<EncoderKind>,
    pub tries_per_run: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub success_threshold: u32,
    pub comparable_tol: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepSpec::default();
        let p = Protocol::default();
        Self {
            learning_rates: s.learning_rates,
            pseudoset_sizes: s.pseudoset_sizes,
            relearn_gaps: s.relearn_gaps,
            extra_pairs: s.extra_pairs,
            strategies: s.strategies,
            observabilities: s.observabilities,
            encoders: s.encoders,
            tries_per_run: p.tries_per_run,
            replications: s.replications,
            base_seed: s.base_seed,
            success_threshold: p.success_threshold,
            comparable_tol: p.comparable_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub plots: bool,
    /// Cell-id substrings selecting which cells get plots; empty selects all.
    pub plot_cells: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            plots: true,
            plot_cells: Vec::new(),
        }
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|error| ConfigError::Io {
        path: path.to_path_buf(),
        error,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(ConfigError::Parse)?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config types always serialize")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(
                "version",
                format!("version must be {CONFIG_VERSION}, got {}", self.version),
            ));
        }
        self.physics.validate().map_err(|e| invalid("physics", e))?;
        self.agent_template()
            .validate()
            .map_err(|e| invalid("agent", e))?;
        self.rehearsal_config(self.rehearsal.strategy)
            .validate()
            .map_err(|e| invalid("rehearsal", e))?;
        self.sweep_spec()
            .validate()
            .map_err(|e| invalid("sweep", e))?;
        self.protocol()
            .validate()
            .map_err(|e| invalid("sweep", e))?;
        if self.sweep.replications == 0 {
            return Err(invalid("sweep", "replications must be at least 1"));
        }
        if self
            .sweep
            .learning_rates
            .iter()
            .any(|&lr| !(lr.is_finite() && lr > 0.0))
        {
            return Err(invalid("sweep", "learning_rates must all be positive"));
        }
        Ok(())
    }

    fn rehearsal_config(&self, strategy: CellStrategy) -> RehearsalConfig {
        let s = &self.rehearsal;
        let learner = strategy.learner().unwrap_or(Strategy::None);
        RehearsalConfig {
            strategy: learner,
            pseudoset_size: if learner == Strategy::None {
                0
            } else {
                s.pseudoset_size
            },
            relearn_gap: s.relearn_gap,
            denom_guard: s.denom_guard,
        }
    }

    fn agent_template(&self) -> AgentConfig {
        let a = &self.agent;
        AgentConfig {
            learning_rate: a.learning_rate,
            gamma: a.gamma,
            epsilon: a.epsilon,
            observability: a.observability,
            encoder: a.encoder,
            linear_range: a.linear_range,
            angular_range: a.angular_range,
            hidden_layers: a.hidden_layers.clone(),
            init_scale: a.init_scale,
            rehearsal: RehearsalConfig {
                denom_guard: self.rehearsal.denom_guard,
                ..RehearsalConfig::default()
            },
        }
    }

    pub fn protocol(&self) -> Protocol {
        Protocol {
            physics: self.physics.clone(),
            agent: self.agent_template(),
            tries_per_run: self.sweep.tries_per_run,
            success_threshold: self.sweep.success_threshold,
            comparable_tol: self.sweep.comparable_tol,
        }
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        let s = &self.sweep;
        SweepSpec {
            learning_rates: s.learning_rates.clone(),
            pseudoset_sizes: s.pseudoset_sizes.clone(),
            relearn_gaps: s.relearn_gaps.clone(),
            extra_pairs: s.extra_pairs.clone(),
            strategies: s.strategies.clone(),
            observabilities: s.observabilities.clone(),
            encoders: s.encoders.clone(),
            replications: s.replications,
            base_seed: s.base_seed,
        }
    }

    /// The single cell described by the `[agent]` and `[rehearsal]` sections.
    pub fn run_cell(&self) -> CellSpec {
        let strategy = self.rehearsal.strategy;
        if strategy == CellStrategy::Random {
            return CellSpec::random(self.agent.observability);
        }
        let rehearsal = strategy.is_rehearsal();
        CellSpec {
            observability: self.agent.observability,
            encoder: self.agent.encoder,
            strategy,
            learning_rate: self.agent.learning_rate,
            pseudoset_size: if rehearsal {
                self.rehearsal.pseudoset_size
            } else {
                0
            },
            relearn_gap: if rehearsal {
                self.rehearsal.relearn_gap
            } else {
                1
            },
        }
    }
}
