//! Experiment configuration for trace generation.
//!
//! ```toml
//! schema_version = 1
//! model = "markov"            # or "baseline"
//! preset = "5gr"              # or params_file = "model.toml", or a [params] table
//! n_snapshots = 100000
//! seed = 42
//! doppler_mode = "redrawn-per-birth"
//! amplitude_mode = "power-scaled-lognormal"
//! carrier_hz = 2.16e9
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineDoppler;
use crate::error::{Error, Result, Violation};
use crate::generator::{AmplitudeMode, DopplerMode, GenConfig};
use crate::params::{preset_5gr, validate, TapParameterSet, CARRIER_5GR_HZ};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Markov,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_file: Option<PathBuf>,
    pub n_snapshots: u64,
    pub seed: u64,
    #[serde(default)]
    pub doppler_mode: DopplerMode,
    #[serde(default)]
    pub amplitude_mode: AmplitudeMode,
    #[serde(default)]
    pub baseline_doppler: BaselineDoppler,
    #[serde(default = "default_carrier")]
    pub carrier_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<TapParameterSet>,
}

fn default_carrier() -> f64 {
    CARRIER_5GR_HZ
}

impl GenerateConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Resolves the parameter source and checks every semantic rule.
    ///
    /// The returned config carries the parameters inline, so it reproduces
    /// the run without the original files.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedConfig> {
        let mut violations = Vec::new();
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            violations.push(Violation::new(
                "schema_version",
                format!("unsupported version {}, expected {CONFIG_SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.n_snapshots == 0 {
            violations.push(Violation::new("n_snapshots", "must be at least 1"));
        }
        if !(self.carrier_hz > 0.0) {
            violations.push(Violation::new("carrier_hz", "must be positive"));
        }
        let sources = [self.preset.is_some(), self.params_file.is_some(), self.params.is_some()];
        let params = match sources.iter().filter(|&&s| s).count() {
            1 => {
                if let Some(name) = &self.preset {
                    match name.as_str() {
                        "5gr" => Some(preset_5gr()),
                        other => {
                            violations.push(Violation::new("preset", format!("unknown preset `{other}`")));
                            None
                        }
                    }
                } else if let Some(file) = &self.params_file {
                    Some(load_params_file(&base_dir.join(file))?)
                } else {
                    self.params.clone()
                }
            }
            _ => {
                violations.push(Violation::new(
                    "preset",
                    "exactly one of `preset`, `params_file` or `[params]` is required",
                ));
                None
            }
        };
        if let Some(p) = &params {
            for v in validate(p).violations {
                violations.push(Violation::new(format!("params.{}", v.field), v.message));
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let params = params.expect("checked above");
        let mut echo = self.clone();
        echo.preset = None;
        echo.params_file = None;
        echo.params = Some(params.clone());
        Ok(ResolvedConfig { params, config: echo })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub params: TapParameterSet,
    /// The config with parameters inlined.
    pub config: GenerateConfig,
}

impl ResolvedConfig {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            n_snapshots: self.config.n_snapshots as usize,
            rng_seed: self.config.seed,
            doppler_mode: self.config.doppler_mode,
            amplitude_mode: self.config.amplitude_mode,
            carrier_hz: self.config.carrier_hz,
        }
    }
}

/// Loads a parameter file, ignoring a `diagnostics` section if present.
pub fn load_params_file(path: &Path) -> Result<TapParameterSet> {
    let text = std::fs::read_to_string(path)?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    table.remove("diagnostics");
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(format!("{}: {e}", path.display())))
}
