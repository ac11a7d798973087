//! JSON run configurations, one document per invocation.
//!
//! Every subcommand takes `--config <file>`; command-line flags (`--seed`,
//! `--metric`, ...) override the corresponding config keys so a run is fully
//! described by one reproducible file plus its overrides.

use crate::error::AppError;
use mtmf::dataset::{load_csv, synth_gen, CsvSchema, MultiTaskDataset, SynthSpec};
use mtmf::eval::{ExperimentConfig, Method, SolverControls};
use mtmf::solver::HyperParams;
use mtmf::SplitSpec;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Where a command's dataset comes from: a CSV file or the generator.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<CsvSchema>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    /// Append a constant-1 feature to every sample.
    #[serde(default)]
    pub add_bias: bool,
}

impl DataConfig {
    pub fn load(&self, seed_override: Option<u64>) -> Result<MultiTaskDataset, AppError> {
        let ds = match (&self.path, &self.synth) {
            (Some(path), None) => {
                let schema = self.schema.clone().unwrap_or_default();
                load_csv(path, &schema)?
            }
            (None, Some(spec)) => {
                let mut spec = spec.clone();
                if let Some(seed) = seed_override {
                    spec.seed = seed;
                }
                synth_gen(&spec)?.0
            }
            _ => {
                return Err(AppError::usage(
                    "data section must set exactly one of `path` (CSV) or `synth`",
                ))
            }
        };
        Ok(if self.add_bias {
            ds.with_bias_column()
        } else {
            ds
        })
    }
}

/// Hyperparameters for `train`: the solver pair for the joint methods, a
/// single `lambda` for the per-task baselines.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyperParams {
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub eps: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
}

impl TrainHyperParams {
    pub fn solver_params(&self) -> Result<HyperParams, AppError> {
        let (gamma, beta) = match (self.gamma, self.beta) {
            (Some(g), Some(b)) => (g, b),
            _ => return Err(AppError::usage("this method needs both `gamma` and `beta`")),
        };
        let mut hp = HyperParams::new(gamma, beta);
        if let Some(eps) = self.eps {
            hp.eps = eps;
        }
        if let Some(max_iter) = self.max_iter {
            hp.max_iter = max_iter;
        }
        if let Some(tol) = self.tol {
            hp.tol = tol;
        }
        hp.validate().map_err(|e| AppError::usage(e.to_string()))?;
        Ok(hp)
    }

    pub fn lambda(&self) -> Result<f64, AppError> {
        match self.lambda {
            Some(l) if l > 0.0 && l.is_finite() => Ok(l),
            Some(l) => Err(AppError::usage(format!("lambda must be > 0, got {l}"))),
            None => Err(AppError::usage("this method needs `lambda`")),
        }
    }
}

/// Inputs for the generalization-bound diagnostic attached by `--bound`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default = "default_one")]
    pub admissibility: f64,
    #[serde(default = "default_one")]
    pub loss_bound: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Estimated from the data when absent.
    #[serde(default)]
    pub feature_norm_bound: Option<f64>,
}

fn default_one() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.05
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            admissibility: 1.0,
            loss_bound: 1.0,
            delta: default_delta(),
            feature_norm_bound: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub method: Method,
    #[serde(default)]
    pub hyperparams: TrainHyperParams,
    #[serde(default)]
    pub bound: Option<BoundConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub model: PathBuf,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub data: DataConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub synth: SynthSpec,
}

/// Which regularizer a sensitivity sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Gamma,
    Beta,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub data: DataConfig,
    pub vary: SweepAxis,
    /// Candidate values for the varied parameter; defaults to its standard
    /// grid.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    /// Value of the parameter held fixed. Defaults: beta = 1 when varying
    /// gamma, gamma = 100 when varying beta.
    #[serde(default)]
    pub fixed: Option<f64>,
    #[serde(default = "default_method")]
    pub method: Method,
    pub split: SplitSpec,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub solver: SolverControls,
}

fn default_method() -> Method {
    Method::Mtmf
}

fn default_repetitions() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    pub model: PathBuf,
}

/// Reads and parses a config file. Any failure here is a usage error: the
/// run must be fully described before compute starts.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::usage(format!("cannot parse config {}: {e}", path.display())))
}
