//! Run configuration: one TOML file covering the model template, stabilizer
//! settings, the single-case definition, and the sweep lattice. Every field
//! has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pipf_core::{LandingCase, ModelParams, StabilizerConfig, SweepSpec};

use crate::{CliError, CliResult};

/// Physical template. Sweep cases override the inertia through their own
/// dimensionless value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub mass: f64,
    pub inertia: f64,
    pub gravity: f64,
    pub leg_length: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { mass: 80.0, inertia: 3.2, gravity: 9.8, leg_length: 1.0 }
    }
}

impl ModelSection {
    pub fn params(&self) -> CliResult<ModelParams> {
        ModelParams::new(self.mass, self.inertia, self.gravity, self.leg_length)
            .map_err(|e| CliError::Input(format!("model: {e}")))
    }
}

/// Stepping envelope for the post-stance capture follow-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CaptureSection {
    /// Maximum step length (m); the steepest-leg offset when absent.
    pub reach: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Sweep worker threads.
    pub workers: usize,
    /// This tool has no random state; the flag is a contract marker and must
    /// stay enabled.
    pub deterministic: bool,
    /// Output directory for all emitted files.
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub stabilizer: StabilizerConfig,
    pub case: LandingCase,
    pub sweep: SweepSpec,
    pub capture: CaptureSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            deterministic: true,
            out_dir: PathBuf::from("out"),
            model: ModelSection::default(),
            stabilizer: StabilizerConfig::default(),
            case: LandingCase::default(),
            sweep: SweepSpec::default(),
            capture: CaptureSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Input(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Internal(format!("config emit: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.workers == 0 {
            return Err(CliError::Input("workers must be positive".into()));
        }
        if !self.deterministic {
            return Err(CliError::Input(
                "nondeterministic mode is not provided; remove `deterministic = false`".into(),
            ));
        }
        self.model.params().map(|_| ())?;
        self.stabilizer.validate().map_err(|e| CliError::Input(format!("stabilizer: {e}")))?;
        self.sweep.validate().map_err(|e| CliError::Input(format!("sweep: {e}")))?;
        if let Some(reach) = self.capture.reach {
            if !(reach.is_finite() && reach > 0.0) {
                return Err(CliError::Input(format!("capture reach must be positive, got {reach}")));
            }
        }
        Ok(())
    }

    /// Step length for capture follow-ups: configured, or the horizontal
    /// offset of a fully extended leg at the steepest allowed angle.
    pub fn capture_reach(&self) -> f64 {
        self.capture
            .reach
            .unwrap_or_else(|| self.model.leg_length * self.stabilizer.alpha_min.cos())
    }
}
