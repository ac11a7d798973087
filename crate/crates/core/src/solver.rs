//! Alternating solver for the joint model-and-feature multi-task problem.
//!
//! The convex formulation optimizes per-task weights `W = [w_1..w_T]`, a
//! shared weight `w0` and a PSD feature matrix `D` with `trace(D) <= 1`:
//!
//! ```text
//! sum_t sum_i (y_ti - <w_t + w0, x_ti>)^2
//!   + (gamma/T) * sum_t <w_t, (D + eps*I)^{-1} w_t>
//!   + beta * <w0, w0>
//! ```
//!
//! The pseudoinverse of `D` is smoothed to `(D + eps*I)^{-1}` throughout.
//! This keeps every subproblem strictly convex and enforces the range
//! constraint `range(W) ⊆ range(D)` numerically: weight mass outside the
//! range of `D` is penalized at `1/eps`.
//!
//! One outer iteration is a closed-form [`w_step`] (a ridge system in stacked
//! variables) followed by the closed-form [`d_step`]
//! `D = (W W^T)^{1/2} / trace((W W^T)^{1/2})`, starting from `D = I/d`. Each
//! step minimizes its own block exactly, so the objective trace is
//! non-increasing. [`factorize`] maps the result to the offsets/hyperplane/
//! feature-map form.

use crate::dataset::{MultiTaskDataset, TaskData};
use crate::linalg::{
    self, eig_sym, l21_norm, psd_pinv, psd_sqrt, LinalgError, SymMatrix, DEFAULT_RANK_TOL,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("linear system is numerically singular")]
    SingularSystem,
    #[error("W is identically zero; feature matrix update is undefined")]
    DegenerateW,
    #[error("task index {task} out of range (model has {tasks} tasks)")]
    TaskOutOfRange { task: usize, tasks: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Regularization weights and iteration controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperParams {
    /// Weight of the squared L2,1 offset penalty (applied as `gamma/T`).
    pub gamma: f64,
    /// Weight of the shared-hyperplane L2 penalty.
    pub beta: f64,
    /// Pseudoinverse smoothing; `D^+` becomes `(D + eps*I)^{-1}`.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Convergence threshold on `|f_k - f_{k+1}| / max(1, f_k)`.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_eps() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-6
}

impl HyperParams {
    pub fn new(gamma: f64, beta: f64) -> Self {
        Self {
            gamma,
            beta,
            eps: default_eps(),
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("eps", self.eps),
            ("tol", self.tol),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(SolverError::InvalidHyperParams(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.max_iter == 0 {
            return Err(SolverError::InvalidHyperParams(
                "max_iter must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Minimizer of the convex formulation.
#[derive(Debug, Clone)]
pub struct ConvexSolution {
    /// d×T; column t is the weight vector of task t.
    pub weights: DMatrix<f64>,
    /// Shared weight vector `w0`.
    pub shared: DVector<f64>,
    /// PSD feature matrix with `trace <= 1`.
    pub feature_matrix: SymMatrix,
}

impl ConvexSolution {
    pub fn num_tasks(&self) -> usize {
        self.weights.ncols()
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    /// `<w_t + w0, x>`.
    pub fn predict(&self, x: &DVector<f64>, task: usize) -> Result<f64, SolverError> {
        if task >= self.num_tasks() {
            return Err(SolverError::TaskOutOfRange {
                task,
                tasks: self.num_tasks(),
            });
        }
        Ok((self.weights.column(task) + &self.shared).dot(x))
    }

    /// Verifies the type invariants: `D` PSD with trace at most 1, and every
    /// task weight inside the numerical range of `D`.
    pub fn check_invariants(&self) -> Result<(), SolverError> {
        let pair = eig_sym(&self.feature_matrix);
        for &v in pair.values.iter() {
            if v < -1e-10 {
                return Err(SolverError::Linalg(LinalgError::NotPsd { eigenvalue: v }));
            }
        }
        if self.feature_matrix.trace() > 1.0 + 1e-8 {
            return Err(SolverError::DimensionMismatch(format!(
                "trace(D) = {} exceeds 1",
                self.feature_matrix.trace()
            )));
        }
        let pinv = psd_pinv(&self.feature_matrix, DEFAULT_RANK_TOL)?;
        let projector = self.feature_matrix.as_matrix() * pinv.as_matrix();
        for t in 0..self.num_tasks() {
            let w_t = self.weights.column(t).clone_owned();
            let residual = (&w_t - &projector * &w_t).norm();
            if residual > 1e-6 * w_t.norm() {
                return Err(SolverError::DimensionMismatch(format!(
                    "weight column {t} leaves range(D) by {residual:.3e}"
                )));
            }
        }
        Ok(())
    }
}

/// Factored form: per-task offsets, shared central hyperplane and orthogonal
/// feature map. Predictions are `<a_t + a0, U^T x>`.
#[derive(Debug, Clone)]
pub struct FactoredSolution {
    /// d×T offset matrix `A`; group-sparse across rows at the optimum.
    pub offsets: DMatrix<f64>,
    /// Shared central hyperplane `a0`.
    pub shared: DVector<f64>,
    /// Orthogonal feature map `U` (d×d).
    pub feature_map: DMatrix<f64>,
}

impl FactoredSolution {
    pub fn num_tasks(&self) -> usize {
        self.offsets.ncols()
    }

    pub fn dim(&self) -> usize {
        self.offsets.nrows()
    }

    pub fn predict(&self, x: &DVector<f64>, task: usize) -> Result<f64, SolverError> {
        if task >= self.num_tasks() {
            return Err(SolverError::TaskOutOfRange {
                task,
                tasks: self.num_tasks(),
            });
        }
        let z = self.feature_map.transpose() * x;
        Ok((self.offsets.column(task) + &self.shared).dot(&z))
    }
}

/// Per-iteration objective values and convergence bookkeeping for one fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Objective after each outer iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
}

impl FitReport {
    /// True when the trace never increases by more than `rel_slack` relative.
    pub fn objective_non_increasing(&self, rel_slack: f64) -> bool {
        self.objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + rel_slack))
    }
}

fn check_dims(
    ds: &MultiTaskDataset,
    weights: &DMatrix<f64>,
    shared: &DVector<f64>,
    feature_matrix: &SymMatrix,
) -> Result<(), SolverError> {
    let d = ds.dim();
    if weights.nrows() != d
        || weights.ncols() != ds.num_tasks()
        || shared.len() != d
        || feature_matrix.dim() != d
    {
        return Err(SolverError::DimensionMismatch(format!(
            "dataset is d={d}, T={}; got W {}x{}, w0 of {}, D of {}",
            ds.num_tasks(),
            weights.nrows(),
            weights.ncols(),
            shared.len(),
            feature_matrix.dim()
        )));
    }
    Ok(())
}

/// Convex objective value. The penalty term uses the smoothed pseudoinverse
/// `(D + eps*I)^{-1}`, evaluated in the eigenbasis of `D`: the `1/eps`
/// directions then multiply only the genuinely tiny out-of-range
/// coefficients instead of contaminating the whole quadratic form through a
/// dense matrix of norm `1/eps`.
pub fn objective(
    ds: &MultiTaskDataset,
    weights: &DMatrix<f64>,
    shared: &DVector<f64>,
    feature_matrix: &SymMatrix,
    hp: &HyperParams,
) -> Result<f64, SolverError> {
    hp.validate()?;
    check_dims(ds, weights, shared, feature_matrix)?;
    let pair = eig_sym(feature_matrix);
    for &v in pair.values.iter() {
        if v < crate::linalg::PSD_EIG_FLOOR {
            return Err(SolverError::Linalg(LinalgError::NotPsd { eigenvalue: v }));
        }
    }

    let mut loss = 0.0;
    let mut penalty = 0.0;
    for (t, task) in ds.tasks().iter().enumerate() {
        let v = weights.column(t) + shared;
        loss += (task.features() * v - task.targets()).norm_squared();
        let coords = pair.vectors.transpose() * weights.column(t);
        penalty += coords
            .iter()
            .zip(pair.values.iter())
            .map(|(c, lambda)| c * c / (lambda.max(0.0) + hp.eps))
            .sum::<f64>();
    }
    let t_count = ds.num_tasks() as f64;
    Ok(loss + hp.gamma / t_count * penalty + hp.beta * shared.norm_squared())
}

/// Objective of the non-convex factored form: squared loss plus
/// `(gamma/T) * ||A||_{2,1}^2 + beta * ||a0||^2`.
pub fn factored_objective(
    ds: &MultiTaskDataset,
    fs: &FactoredSolution,
    hp: &HyperParams,
) -> Result<f64, SolverError> {
    hp.validate()?;
    if fs.dim() != ds.dim() || fs.num_tasks() != ds.num_tasks() {
        return Err(SolverError::DimensionMismatch(
            "factored solution does not match dataset".into(),
        ));
    }
    let mut loss = 0.0;
    for (t, task) in ds.tasks().iter().enumerate() {
        let v = &fs.feature_map * (fs.offsets.column(t) + &fs.shared);
        loss += (task.features() * v - task.targets()).norm_squared();
    }
    let l21 = l21_norm(&fs.offsets);
    let t_count = ds.num_tasks() as f64;
    Ok(loss + hp.gamma / t_count * l21 * l21 + hp.beta * fs.shared.norm_squared())
}

/// SPD solve with a Cholesky fast path and LU fallback. Symmetrizes first so
/// accumulation noise cannot upset the factorization.
fn solve_spd(m: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, SolverError> {
    let m = (&m + m.transpose()) * 0.5;
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    m.lu().solve(rhs).ok_or(SolverError::SingularSystem)
}

fn solve_spd_vec(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let sol = solve_spd(m, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Ok(DVector::from_column_slice(sol.as_slice()))
}

/// Gram matrix `F^T F` and moment vector `F^T y` of one task.
fn task_moments(task: &TaskData) -> (DMatrix<f64>, DVector<f64>) {
    let f = task.features();
    (f.transpose() * f, f.transpose() * task.targets())
}

/// Exact minimizer over `(W, w0)` for fixed `D`.
///
/// Two algebraically equivalent routes are implemented: the primal normal
/// equations in the stacked `(w_1..w_T, w0)` variables, solved by eliminating
/// the task blocks against the shared weight in `O((T+1) d^3)`, and a dual
/// system over the samples reached through the matrix-inversion identity in
/// `O(M^3)`. The cheaper route by factorization-cost estimate is taken —
/// in practice the dual wins only when samples are scarcer than features —
/// and both agree to rounding error. The choice is invisible to callers.
pub fn w_step(
    ds: &MultiTaskDataset,
    feature_matrix: &SymMatrix,
    hp: &HyperParams,
) -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
    w_step_impl(ds, feature_matrix, hp, false)
}

/// Rough factorization flop counts for route selection. The primal pays one
/// d-dimensional Cholesky per task (plus one for the shared weight) and the
/// Gram products; the dual pays the kernel build and its M-dimensional
/// factorization (per-task kernels when the shared weight is pinned).
fn dual_route_cheaper(ds: &MultiTaskDataset, pin_shared: bool) -> bool {
    let d = ds.dim() as f64;
    let m_total = ds.total_samples() as f64;
    let tasks = ds.num_tasks() as f64;
    let factorizations = if pin_shared { tasks } else { tasks + 1.0 };
    let primal = factorizations * d * d * d / 3.0 + m_total * d * d;
    let dual = if pin_shared {
        ds.tasks()
            .iter()
            .map(|task| {
                let m = task.num_samples() as f64;
                m * m * m / 6.0 + m * m * d
            })
            .sum()
    } else {
        m_total * m_total * m_total / 6.0 + m_total * m_total * d
    };
    dual < primal
}

pub(crate) fn w_step_impl(
    ds: &MultiTaskDataset,
    feature_matrix: &SymMatrix,
    hp: &HyperParams,
    pin_shared: bool,
) -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
    hp.validate()?;
    let d = ds.dim();
    if feature_matrix.dim() != d {
        return Err(SolverError::DimensionMismatch(format!(
            "D has dimension {} but dataset has {d}",
            feature_matrix.dim()
        )));
    }
    if dual_route_cheaper(ds, pin_shared) {
        w_step_dual(ds, feature_matrix, hp, pin_shared)
    } else {
        w_step_primal(ds, feature_matrix, hp, pin_shared)
    }
}

fn w_step_primal(
    ds: &MultiTaskDataset,
    feature_matrix: &SymMatrix,
    hp: &HyperParams,
    pin_shared: bool,
) -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
    let d = ds.dim();
    let t_count = ds.num_tasks();
    let ratio = hp.gamma / t_count as f64;
    let penalty = linalg::psd_inv_smoothed(feature_matrix, hp.eps)?.into_inner() * ratio;

    let mut weights = DMatrix::zeros(d, t_count);

    if pin_shared {
        for (t, task) in ds.tasks().iter().enumerate() {
            let (gram, moment) = task_moments(task);
            weights.set_column(t, &solve_spd_vec(gram + &penalty, &moment)?);
        }
        return Ok((weights, DVector::zeros(d)));
    }

    // Stationarity of the stacked system:
    //   (G_t + penalty) w_t + G_t w0            = b_t          for each t
    //   sum_t G_t w_t + (sum_t G_t + beta I) w0 = sum_t b_t
    // Task blocks couple only through w0, so eliminate them first and solve
    // the d-dimensional Schur system for w0.
    let mut schur = DMatrix::zeros(d, d);
    let mut schur_rhs = DVector::zeros(d);
    let mut moments = Vec::with_capacity(t_count);

    for task in ds.tasks() {
        let (gram, moment) = task_moments(task);
        let mut augmented = DMatrix::zeros(d, d + 1);
        augmented.view_mut((0, 0), (d, d)).copy_from(&gram);
        augmented.view_mut((0, d), (d, 1)).copy_from(&moment);
        let solved = solve_spd(&gram + &penalty, &augmented)?;
        let h_inv_gram = solved.view((0, 0), (d, d)).clone_owned();
        let h_inv_moment = solved.column(d).clone_owned();

        schur += &gram - &gram * h_inv_gram;
        schur_rhs += &moment - &gram * h_inv_moment;
        moments.push((gram, moment));
    }
    for i in 0..d {
        schur[(i, i)] += hp.beta;
    }
    let shared = solve_spd_vec(schur, &schur_rhs)?;

    for (t, (gram, moment)) in moments.into_iter().enumerate() {
        let rhs = moment - &gram * &shared;
        weights.set_column(t, &solve_spd_vec(gram + &penalty, &rhs)?);
    }
    Ok((weights, shared))
}

fn w_step_dual(
    ds: &MultiTaskDataset,
    feature_matrix: &SymMatrix,
    hp: &HyperParams,
    pin_shared: bool,
) -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
    let d = ds.dim();
    let t_count = ds.num_tasks();
    let ratio = hp.gamma / t_count as f64;
    let smoothed = feature_matrix.as_matrix() + DMatrix::identity(d, d) * hp.eps;

    if pin_shared {
        // fully decoupled: one m_t-dimensional kernel system per task
        let mut weights = DMatrix::zeros(d, t_count);
        for (t, task) in ds.tasks().iter().enumerate() {
            let f = task.features();
            let m = task.num_samples();
            let mut kernel = (f * &smoothed * f.transpose()) / ratio;
            for i in 0..m {
                kernel[(i, i)] += 1.0;
            }
            let alpha = solve_spd_vec(kernel, task.targets())?;
            weights.set_column(t, &(&smoothed * (f.transpose() * alpha) / ratio));
        }
        return Ok((weights, DVector::zeros(d)));
    }

    let m_total = ds.total_samples();
    let mut offset = Vec::with_capacity(t_count + 1);
    offset.push(0usize);
    for task in ds.tasks() {
        offset.push(offset.last().unwrap() + task.num_samples());
    }

    // K = blockdiag((T/gamma) F_t (D+eps I) F_t^T) + (1/beta) F F^T
    let mut stacked = DMatrix::zeros(m_total, d);
    let mut targets = DVector::zeros(m_total);
    for (t, task) in ds.tasks().iter().enumerate() {
        let m = task.num_samples();
        stacked
            .view_mut((offset[t], 0), (m, d))
            .copy_from(task.features());
        targets
            .view_mut((offset[t], 0), (m, 1))
            .copy_from(task.targets());
    }
    let mut kernel = (&stacked * stacked.transpose()) / hp.beta;
    for (t, task) in ds.tasks().iter().enumerate() {
        let f = task.features();
        let m = task.num_samples();
        let block = (f * &smoothed * f.transpose()) / ratio;
        let mut view = kernel.view_mut((offset[t], offset[t]), (m, m));
        view += &block;
    }
    for i in 0..m_total {
        kernel[(i, i)] += 1.0;
    }
    let alpha = solve_spd_vec(kernel, &targets)?;

    let mut weights = DMatrix::zeros(d, t_count);
    let mut shared = DVector::zeros(d);
    for (t, task) in ds.tasks().iter().enumerate() {
        let alpha_t = alpha.rows(offset[t], task.num_samples()).clone_owned();
        let lifted = task.features().transpose() * alpha_t;
        weights.set_column(t, &(&smoothed * &lifted / ratio));
        shared += lifted;
    }
    shared /= hp.beta;
    Ok((weights, shared))
}

/// Closed-form minimizer of the feature-matrix subproblem for fixed `W`:
/// `D = (W W^T)^{1/2} / trace((W W^T)^{1/2})`. The result has trace exactly 1.
///
/// Errors with [`SolverError::DegenerateW`] when `W` is identically zero (the
/// expression is 0/0 there); [`fit`] substitutes `I/d` and continues.
pub fn d_step(weights: &DMatrix<f64>) -> Result<SymMatrix, SolverError> {
    let scale = weights.abs().max();
    if scale == 0.0 {
        return Err(SolverError::DegenerateW);
    }
    // The update is invariant to rescaling W; normalize for conditioning.
    let scaled = weights / scale;
    let root = psd_sqrt(&SymMatrix::symmetrized(&scaled * scaled.transpose()))?;
    let trace = root.trace();
    if trace <= 0.0 {
        return Err(SolverError::DegenerateW);
    }
    Ok(SymMatrix::symmetrized(root.as_matrix() / trace))
}

fn isotropic(d: usize) -> SymMatrix {
    SymMatrix::symmetrized(DMatrix::identity(d, d) / d as f64)
}

/// Alternates [`w_step`] and [`d_step`] from `D = I/d` until the relative
/// objective change drops below `hp.tol` or `hp.max_iter` is reached.
///
/// The closed-form feature-matrix update minimizes the unsmoothed penalty;
/// under the eps-smoothed objective it can drift upward at the smoothing's
/// noise floor (order `d * eps` relative). An update is therefore only
/// accepted when it does not increase the objective, which makes the trace
/// non-increasing by construction while leaving the generic iteration
/// untouched.
pub fn fit(
    ds: &MultiTaskDataset,
    hp: &HyperParams,
) -> Result<(ConvexSolution, FitReport), SolverError> {
    fit_impl(ds, hp, false)
}

pub(crate) fn fit_impl(
    ds: &MultiTaskDataset,
    hp: &HyperParams,
    pin_shared: bool,
) -> Result<(ConvexSolution, FitReport), SolverError> {
    hp.validate()?;
    let start = Instant::now();
    let d = ds.dim();

    let mut feature_matrix = isotropic(d);
    let mut weights = DMatrix::zeros(d, ds.num_tasks());
    let mut shared = DVector::zeros(d);
    let mut previous = objective(ds, &weights, &shared, &feature_matrix, hp)?;

    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..hp.max_iter {
        let (w, w0) = w_step_impl(ds, &feature_matrix, hp, pin_shared)?;
        weights = w;
        shared = w0;
        let at_current = objective(ds, &weights, &shared, &feature_matrix, hp)?;
        let value = match d_step(&weights) {
            Ok(candidate) => {
                let at_candidate = objective(ds, &weights, &shared, &candidate, hp)?;
                if at_candidate <= at_current {
                    feature_matrix = candidate;
                    at_candidate
                } else {
                    at_current
                }
            }
            Err(SolverError::DegenerateW) => {
                // W = 0: the penalty vanishes for any D; reset to isotropic
                feature_matrix = isotropic(d);
                at_current
            }
            Err(e) => return Err(e),
        };
        trace.push(value);
        if (previous - value).abs() / previous.max(1.0) < hp.tol {
            converged = true;
            break;
        }
        previous = value;
    }

    let report = FitReport {
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((
        ConvexSolution {
            weights,
            shared,
            feature_matrix,
        },
        report,
    ))
}

/// Recovers the factored solution: `U` is the orthonormal eigenbasis of `D`
/// (eigenvalues descending, signs fixed), `A = U^T W`, `a0 = U^T w0`.
/// Predictions are preserved exactly.
pub fn factorize(cs: &ConvexSolution) -> FactoredSolution {
    let pair = eig_sym(&cs.feature_matrix);
    let feature_map = pair.vectors;
    FactoredSolution {
        offsets: feature_map.transpose() * &cs.weights,
        shared: feature_map.transpose() * &cs.shared,
        feature_map,
    }
}
