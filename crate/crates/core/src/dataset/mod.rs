//! Multi-task dataset containers plus ingestion, synthesis, splitting and
//! PCA reduction.
//!
//! All randomized operations (synthesis, splitting) are driven by a ChaCha8
//! stream seeded from a caller-supplied 64-bit seed, with in-house
//! Fisher–Yates shuffles, so results are bit-identical across platforms and
//! releases.

mod csv_io;
mod pca;
mod split;
mod synth;

pub use csv_io::{load_csv, load_csv_with_ids, write_csv, CsvSchema};
pub use pca::{pca_reduce, PcaProjection};
pub use split::split;
pub use synth::{synth_gen, GroundTruth, SynthSpec};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("empty task: {0}")]
    EmptyTask(String),
    #[error("task {task} has {available} samples, split needs at least {needed}")]
    InsufficientSamples {
        task: usize,
        available: usize,
        needed: usize,
    },
    #[error("k = {k} exceeds feature dimension {d}")]
    KTooLarge { k: usize, d: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

/// Samples and targets of one regression task.
///
/// `features` is m×d with one sample per row; `targets` has length m.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    features: DMatrix<f64>,
    targets: DVector<f64>,
}

impl TaskData {
    pub fn new(features: DMatrix<f64>, targets: DVector<f64>) -> Result<Self, DataError> {
        if features.nrows() == 0 {
            return Err(DataError::EmptyTask("task has no samples".into()));
        }
        if features.nrows() != targets.len() {
            return Err(DataError::DimensionMismatch(format!(
                "{} feature rows vs {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(DataError::DimensionMismatch(
                "non-finite entry in task data".into(),
            ));
        }
        Ok(Self { features, targets })
    }

    /// m×d sample matrix, one sample per row.
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn num_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Sub-task holding the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> TaskData {
        let d = self.dim();
        let features = DMatrix::from_fn(indices.len(), d, |i, j| self.features[(indices[i], j)]);
        let targets = DVector::from_fn(indices.len(), |i, _| self.targets[indices[i]]);
        TaskData { features, targets }
    }
}

/// A collection of `T >= 1` tasks over a shared d-dimensional feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    tasks: Vec<TaskData>,
    dim: usize,
}

impl MultiTaskDataset {
    pub fn new(tasks: Vec<TaskData>) -> Result<Self, DataError> {
        let first = tasks
            .first()
            .ok_or_else(|| DataError::EmptyTask("dataset has no tasks".into()))?;
        let dim = first.dim();
        for (t, task) in tasks.iter().enumerate() {
            if task.dim() != dim {
                return Err(DataError::DimensionMismatch(format!(
                    "task {t} has dimension {} but task 0 has {dim}",
                    task.dim()
                )));
            }
        }
        Ok(Self { tasks, dim })
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &TaskData {
        &self.tasks[t]
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total sample count across tasks.
    pub fn total_samples(&self) -> usize {
        self.tasks.iter().map(TaskData::num_samples).sum()
    }

    /// All targets concatenated in task order, matching prediction order.
    pub fn pooled_targets(&self) -> DVector<f64> {
        let all: Vec<f64> = self
            .tasks
            .iter()
            .flat_map(|t| t.targets.iter().copied())
            .collect();
        DVector::from_vec(all)
    }

    /// Appends a constant-1 feature to every sample. Loaders use this when a
    /// bias term is wanted; the models themselves are intercept-free.
    pub fn with_bias_column(&self) -> MultiTaskDataset {
        let tasks = self
            .tasks
            .iter()
            .map(|t| {
                let m = t.num_samples();
                let d = t.dim();
                let features =
                    DMatrix::from_fn(
                        m,
                        d + 1,
                        |i, j| {
                            if j < d {
                                t.features[(i, j)]
                            } else {
                                1.0
                            }
                        },
                    );
                TaskData {
                    features,
                    targets: t.targets.clone(),
                }
            })
            .collect();
        MultiTaskDataset {
            tasks,
            dim: self.dim + 1,
        }
    }
}

/// Per-task train/validation/test partition sizes.
///
/// Exactly one of `train_fraction` and `train_count_per_task` must be set.
/// When `validation_fraction` is absent, the held-out remainder is split
/// 50/50 between validation and test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_count_per_task: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn by_fraction(train: f64, validation: Option<f64>, seed: u64) -> Self {
        Self {
            train_fraction: Some(train),
            train_count_per_task: None,
            validation_fraction: validation,
            seed,
        }
    }

    pub fn by_count(train: usize, validation: Option<f64>, seed: u64) -> Self {
        Self {
            train_fraction: None,
            train_count_per_task: Some(train),
            validation_fraction: validation,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }

    pub(crate) fn validate(&self) -> Result<(), DataError> {
        match (self.train_fraction, self.train_count_per_task) {
            (Some(f), None) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(DataError::InvalidSpec(format!(
                        "train_fraction {f} not in (0,1)"
                    )));
                }
                if let Some(v) = self.validation_fraction {
                    if !(v > 0.0 && v < 1.0) || f + v >= 1.0 {
                        return Err(DataError::InvalidSpec(format!(
                            "validation_fraction {v} invalid with train_fraction {f}"
                        )));
                    }
                }
            }
            (None, Some(c)) => {
                if c == 0 {
                    return Err(DataError::InvalidSpec(
                        "train_count_per_task must be >= 1".into(),
                    ));
                }
                if let Some(v) = self.validation_fraction {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(DataError::InvalidSpec(format!(
                            "validation_fraction {v} not in (0,1)"
                        )));
                    }
                }
            }
            _ => {
                return Err(DataError::InvalidSpec(
                    "set exactly one of train_fraction / train_count_per_task".into(),
                ))
            }
        }
        Ok(())
    }
}
