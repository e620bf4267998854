//! Run configuration: one TOML (or JSON) file with a block per command.

use std::path::{Path, PathBuf};

use grsf_dtr_core::dtr::{DtrParams, StrataSpec};
use grsf_dtr_core::eval::CvParams;
use grsf_dtr_core::sim::{preset, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "current_version")]
    pub version: u32,
    /// Master seed; `--seed` overrides it.
    pub seed: Option<u64>,
    /// Worker threads; `--jobs` overrides it.
    pub jobs: Option<usize>,
    /// Output directory; `--out` overrides it.
    pub out: Option<PathBuf>,
    pub sim: Option<SimBlock>,
    pub data: Option<DataBlock>,
    pub fit: Option<FitBlock>,
    pub predict: Option<PredictBlock>,
    pub evaluate: Option<EvaluateBlock>,
    pub reproduce: Option<ReproduceBlock>,
}

fn current_version() -> u32 {
    CONFIG_VERSION
}

/// Either a named preset (with optional overrides) or a full inline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub preset: Option<String>,
    pub model: Option<SimConfig>,
    pub n_patients: Option<usize>,
    pub replicates: Option<usize>,
}

impl SimBlock {
    pub fn resolve(&self, seed: Option<u64>) -> Result<SimConfig> {
        let mut cfg = match (&self.preset, &self.model) {
            (Some(id), None) => preset(id)?,
            (None, Some(m)) => m.clone(),
            _ => return Err(CliError::Validation("[sim] needs exactly one of `preset` or `model`".into())),
        };
        if let Some(n) = self.n_patients {
            cfg.n_patients = n;
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    /// Long-format visit CSV.
    pub visits: PathBuf,
    pub tau: f64,
    /// Visit cap; defaults to the largest visit count in the data.
    pub k_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitBlock {
    pub strata: StrataSpec,
    pub dtr: DtrParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictBlock {
    pub model: PathBuf,
    /// Histories to score; defaults to `[data].visits`.
    pub visits: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    #[serde(default = "default_mc_n")]
    pub n: usize,
}

fn default_mc_n() -> usize {
    grsf_dtr_core::eval::MC_DEFAULT_N
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateBlock {
    /// Fitted model for Monte-Carlo or held-out IPCW evaluation.
    pub model: Option<PathBuf>,
    /// Monte-Carlo value of the model and the observed regime on `[sim]`.
    pub mc: Option<McBlock>,
    /// Held-out visit CSV for IPCW; nuisance models are fitted on `[data]`.
    pub test: Option<PathBuf>,
    /// Cross-validate the whole fitting pipeline on `[data]`.
    pub cv: Option<CvParams>,
    /// Ensemble sizes for the value-versus-trees table (requires `cv`).
    pub trees: Option<Vec<usize>>,
    /// Propensity covariates by column name; all history columns by default.
    pub propensity_covariates: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// One stratum.
    Single,
    /// Two strata split at the automatically chosen cutpoint.
    Two,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Single => "single",
            Arm::Two => "two",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceBlock {
    pub preset: String,
    /// Defaults to the preset's desk-scale count, or 200 with `--full-scale`.
    pub replicates: Option<usize>,
    pub n_patients: Option<usize>,
    #[serde(default = "default_mc_n")]
    pub mc_n: usize,
    #[serde(default)]
    pub dtr: DtrParams,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    /// Minimum share of failures in the later stratum of the two-strata arm.
    #[serde(default = "default_share")]
    pub min_event_share: f64,
}

fn default_arms() -> Vec<Arm> {
    vec![Arm::Single, Arm::Two]
}

fn default_share() -> f64 {
    0.3
}

impl RunConfig {
    /// Reads TOML, or JSON for `.json` files, and makes relative paths
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Validation(format!("config file {} does not exist", path.display())),
            _ => CliError::io(path, e),
        })?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        };
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                message: format!("unsupported config version {} (expected {CONFIG_VERSION})", cfg.version),
            });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(o) = &mut self.out {
            fix(o);
        }
        if let Some(d) = &mut self.data {
            fix(&mut d.visits);
        }
        if let Some(p) = &mut self.predict {
            fix(&mut p.model);
            if let Some(v) = &mut p.visits {
                fix(v);
            }
        }
        if let Some(e) = &mut self.evaluate {
            if let Some(m) = &mut e.model {
                fix(m);
            }
            if let Some(t) = &mut e.test {
                fix(t);
            }
        }
    }

    pub fn block<'a, T>(&self, block: &'a Option<T>, name: &str) -> Result<&'a T> {
        block
            .as_ref()
            .ok_or_else(|| CliError::Validation(format!("the config has no [{name}] block")))
    }
}

/// Fails with a validation error when an input file is missing.
pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("input file {} does not exist", path.display())))
    }
}
