//! Single-task and degenerate multi-task baselines: per-task L2-regularized
//! regression, per-task L1-regularized regression, and the
//! shared-features-only variant obtained by pinning the shared weight to
//! zero.
//!
//! All baselines are intercept-free, matching the homogeneous linear model of
//! the solver; append a constant feature via
//! [`MultiTaskDataset::with_bias_column`] when a bias is wanted.

use crate::dataset::MultiTaskDataset;
use crate::solver::{self, ConvexSolution, FitReport, HyperParams, SolverError};
use nalgebra::{DMatrix, DVector};

/// Which baseline produced a [`BaselineModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Per-task ridge regression.
    L2R,
    /// Per-task lasso regression.
    L1R,
    /// Shared-features-only multi-task model (zero shared weight).
    Cmtl,
}

/// A fitted per-task linear predictor: column t of `weights` predicts task t
/// as `<w_t, x>`.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    /// d×T weight matrix.
    pub weights: DMatrix<f64>,
    /// False only when lasso coordinate descent hit its iteration cap.
    pub converged: bool,
}

impl BaselineModel {
    pub fn num_tasks(&self) -> usize {
        self.weights.ncols()
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict(&self, x: &DVector<f64>, task: usize) -> f64 {
        assert!(task < self.num_tasks(), "task {task} out of range");
        self.weights.column(task).dot(x)
    }

    /// Fraction of weight entries with magnitude below 1e-10.
    pub fn sparsity(&self) -> f64 {
        let zeros = self.weights.iter().filter(|v| v.abs() < 1e-10).count();
        zeros as f64 / (self.weights.nrows() * self.weights.ncols()) as f64
    }

    /// Collapses a shared-features solution into per-task predictor columns
    /// `w_t + w0`.
    pub fn from_convex(kind: BaselineKind, cs: &ConvexSolution) -> Self {
        let mut weights = cs.weights.clone();
        for t in 0..weights.ncols() {
            let col = weights.column(t) + &cs.shared;
            weights.set_column(t, &col);
        }
        Self {
            kind,
            weights,
            converged: true,
        }
    }
}

/// Per-task ridge regression: `w_t = argmin ||y_t - F_t w||^2 + lambda ||w||^2`,
/// solved by the normal equations.
pub fn ridge_fit(ds: &MultiTaskDataset, lambda: f64) -> BaselineModel {
    assert!(lambda > 0.0, "lambda must be positive");
    let d = ds.dim();
    let mut weights = DMatrix::zeros(d, ds.num_tasks());
    for (t, task) in ds.tasks().iter().enumerate() {
        let f = task.features();
        let mut gram = f.transpose() * f;
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let rhs = f.transpose() * task.targets();
        let w = gram
            .cholesky()
            .expect("gram + lambda I is positive definite")
            .solve(&rhs);
        weights.set_column(t, &w);
    }
    BaselineModel {
        kind: BaselineKind::L2R,
        weights,
        converged: true,
    }
}

fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Per-task lasso: cyclic coordinate descent on
/// `||y_t - F_t w||^2 + lambda ||w||_1` until the largest coordinate change
/// in a sweep falls below `tol`.
///
/// Hitting `max_iter` is reported through `converged = false`, not an error.
pub fn lasso_fit(ds: &MultiTaskDataset, lambda: f64, max_iter: usize, tol: f64) -> BaselineModel {
    assert!(lambda > 0.0, "lambda must be positive");
    assert!(tol > 0.0 && max_iter >= 1);
    let d = ds.dim();
    let mut weights = DMatrix::zeros(d, ds.num_tasks());
    let mut converged = true;

    for (t, task) in ds.tasks().iter().enumerate() {
        let f = task.features();
        let col_sq: Vec<f64> = (0..d).map(|j| f.column(j).norm_squared()).collect();
        let mut w = DVector::zeros(d);
        let mut residual = task.targets().clone();

        let mut task_converged = false;
        for _ in 0..max_iter {
            let mut max_change = 0.0f64;
            for j in 0..d {
                if col_sq[j] == 0.0 {
                    continue;
                }
                let column = f.column(j);
                // correlation with the residual excluding feature j
                let rho = column.dot(&residual) + col_sq[j] * w[j];
                let updated = soft_threshold(rho, lambda / 2.0) / col_sq[j];
                let change = updated - w[j];
                if change != 0.0 {
                    residual -= column * change;
                    w[j] = updated;
                }
                max_change = max_change.max(change.abs());
            }
            if max_change < tol {
                task_converged = true;
                break;
            }
        }
        converged &= task_converged;
        weights.set_column(t, &w);
    }
    BaselineModel {
        kind: BaselineKind::L1R,
        weights,
        converged,
    }
}

/// Shared-features-only multi-task learner: the same alternating loop as
/// [`solver::fit`] with the shared weight pinned at zero in every w-step.
pub fn cmtl_fit(
    ds: &MultiTaskDataset,
    hp: &HyperParams,
) -> Result<(ConvexSolution, FitReport), SolverError> {
    solver::fit_impl(ds, hp, true)
}
