//! Model serialization.
//!
//! Fitted models travel as a single JSON document holding the convex
//! variables (`W`, `w0`, `D`), the factored variables (`A`, `a0`, `U`), the
//! hyperparameters and a fit report. Matrices are nested arrays in row-major
//! order. Baseline models reuse the same document with the factored and
//! feature-matrix sections omitted.
//!
//! Timing is deliberately excluded from the document so that runs with the
//! same config and seed serialize byte-identically; wall time belongs on the
//! diagnostic stream.

use crate::baselines::{BaselineKind, BaselineModel};
use crate::bound::BoundTerms;
use crate::solver::{ConvexSolution, FactoredSolution, FitReport, HyperParams, SolverError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed model: {0}")]
    Malformed(String),
}

/// Hyperparameters stored with a model: the solver set for the joint
/// learners, a single lambda for the per-task baselines.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperParamsDoc {
    Solver(HyperParams),
    Baseline { lambda: f64 },
}

/// Fit report without timing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDoc {
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundTerms>,
}

impl ReportDoc {
    pub fn from_report(report: &FitReport) -> Self {
        Self {
            objective_trace: report.objective_trace.clone(),
            iterations: report.iterations,
            converged: report.converged,
            bound: None,
        }
    }
}

/// The on-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub method: String,
    #[serde(rename = "W")]
    pub weights: Vec<Vec<f64>>,
    #[serde(rename = "w0")]
    pub shared: Vec<f64>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub feature_matrix: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<Vec<f64>>>,
    #[serde(rename = "a0", default, skip_serializing_if = "Option::is_none")]
    pub factored_shared: Option<Vec<f64>>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub feature_map: Option<Vec<Vec<f64>>>,
    pub hyperparams: HyperParamsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportDoc>,
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelIoError> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(ModelIoError::Malformed("matrix with zero rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelIoError::Malformed(
            "ragged or empty matrix rows".into(),
        ));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelDocument {
    /// Document for a fitted joint model, carrying both the convex and the
    /// factored variables.
    pub fn from_joint(
        method: &str,
        cs: &ConvexSolution,
        fs: &FactoredSolution,
        hp: &HyperParams,
        report: &FitReport,
    ) -> Self {
        Self {
            method: method.to_string(),
            weights: matrix_to_rows(&cs.weights),
            shared: cs.shared.iter().copied().collect(),
            feature_matrix: Some(matrix_to_rows(cs.feature_matrix.as_matrix())),
            offsets: Some(matrix_to_rows(&fs.offsets)),
            factored_shared: Some(fs.shared.iter().copied().collect()),
            feature_map: Some(matrix_to_rows(&fs.feature_map)),
            hyperparams: HyperParamsDoc::Solver(hp.clone()),
            report: Some(ReportDoc::from_report(report)),
        }
    }

    pub fn from_baseline(model: &BaselineModel, lambda: f64) -> Self {
        let method = match model.kind {
            BaselineKind::L2R => "l2r",
            BaselineKind::L1R => "l1r",
            BaselineKind::Cmtl => "cmtl",
        };
        let d = model.dim();
        Self {
            method: method.to_string(),
            weights: matrix_to_rows(&model.weights),
            shared: vec![0.0; d],
            feature_matrix: None,
            offsets: None,
            factored_shared: None,
            feature_map: None,
            hyperparams: HyperParamsDoc::Baseline { lambda },
            report: None,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Rebuilds a predictor. The factored variables are preferred when
    /// present; otherwise predictions fall back to `<w_t + w0, x>` (the two
    /// agree to rounding for a valid document).
    pub fn predictor(&self) -> Result<ModelPredictor, ModelIoError> {
        let weights = rows_to_matrix(&self.weights)?;
        let shared = DVector::from_vec(self.shared.clone());
        if shared.len() != weights.nrows() {
            return Err(ModelIoError::Malformed(format!(
                "w0 has {} entries but W has {} rows",
                shared.len(),
                weights.nrows()
            )));
        }
        let factored = match (&self.offsets, &self.factored_shared, &self.feature_map) {
            (Some(a), Some(a0), Some(u)) => {
                let fs = FactoredSolution {
                    offsets: rows_to_matrix(a)?,
                    shared: DVector::from_vec(a0.clone()),
                    feature_map: rows_to_matrix(u)?,
                };
                if fs.dim() != weights.nrows() || fs.num_tasks() != weights.ncols() {
                    return Err(ModelIoError::Malformed(
                        "factored block disagrees with W".into(),
                    ));
                }
                Some(fs)
            }
            (None, None, None) => None,
            _ => {
                return Err(ModelIoError::Malformed(
                    "partial factored block: A, a0 and U must appear together".into(),
                ))
            }
        };
        Ok(ModelPredictor {
            weights,
            shared,
            factored,
        })
    }
}

/// A model rebuilt from its JSON document.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    weights: DMatrix<f64>,
    shared: DVector<f64>,
    factored: Option<FactoredSolution>,
}

impl ModelPredictor {
    pub fn num_tasks(&self) -> usize {
        self.weights.ncols()
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict(&self, x: &DVector<f64>, task: usize) -> Result<f64, SolverError> {
        if task >= self.num_tasks() {
            return Err(SolverError::TaskOutOfRange {
                task,
                tasks: self.num_tasks(),
            });
        }
        match &self.factored {
            Some(fs) => fs.predict(x, task),
            None => Ok((self.weights.column(task) + &self.shared).dot(x)),
        }
    }
}

/// Serializes a document to pretty JSON with a trailing newline. Output is a
/// pure function of the document, so identical fits produce identical bytes.
pub fn model_to_json(doc: &ModelDocument) -> Result<String, ModelIoError> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    Ok(text)
}

pub fn write_model(path: impl AsRef<Path>, doc: &ModelDocument) -> Result<(), ModelIoError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(model_to_json(doc)?.as_bytes())?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelDocument, ModelIoError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Headerless CSV of a matrix, one line per row. Used to export the offset
/// matrix and hyperplane for weight inspection.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<(), ModelIoError> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
