//! Experiment configuration files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dp::DpOptions;
use crate::error::{Error, Result};
use crate::model::{build_channel, ChannelSpec, ChannelTables, Prior, Scenario};

/// Value of the top-level `schema` field.
pub const SCHEMA: &str = "covert-qcd/1";

/// Smallest accepted number of runs per grid point.
pub const MIN_RUNS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Innocent,
    ConstantBeta,
    Dp,
}

impl PolicyChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::Innocent => "innocent",
            Self::ConstantBeta => "constant_beta",
            Self::Dp => "dp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub channel: ChannelTables,
    pub rho: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub scenario: ScenarioConfig,
    /// Values of `|ln alpha|`.
    pub grid: Vec<u32>,
    pub n_runs: u64,
    pub seed: u64,
    pub policies: Vec<PolicyChoice>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dp: DpOptions,
}

impl ExperimentConfig {
    /// Parses and validates a configuration document. Syntax errors carry
    /// the line and column reported by the JSON parser.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!("unsupported schema {:?}, expected {SCHEMA:?}", self.schema)));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("grid must not be empty".into()));
        }
        if !self.grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("grid must be strictly increasing".into()));
        }
        if self.grid[0] == 0 {
            return Err(Error::Config("grid values |ln alpha| must be at least 1".into()));
        }
        if self.n_runs < MIN_RUNS {
            return Err(Error::Config(format!("n_runs = {} is below the minimum of {MIN_RUNS}", self.n_runs)));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        Ok(())
    }

    /// Validates the channel against the modelling assumptions.
    pub fn channel(&self) -> Result<Arc<ChannelSpec>> {
        Ok(Arc::new(build_channel(self.scenario.channel.clone())?))
    }

    /// Scenario at grid value `abs_ln_alpha`.
    pub fn scenario(&self, channel: &Arc<ChannelSpec>, abs_ln_alpha: u32) -> Result<Scenario> {
        Scenario::new(
            channel.clone(),
            Prior::new(self.scenario.rho)?,
            self.scenario.delta,
            f64::from(abs_ln_alpha),
        )
    }
}
