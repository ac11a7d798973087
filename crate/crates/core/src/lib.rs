//! Multi-task regression that jointly learns a shared feature subspace and a
//! shared central hyperplane.
//!
//! The learner ("MTMF") fits `T` linear regression tasks at once. In a learned
//! orthogonal feature space every task predicts with `a_t + a0`, where `a0` is
//! a hyperplane common to all tasks and `a_t` a per-task offset whose rows are
//! driven to zero as a group by a squared L2,1 penalty. Training happens in a
//! convex reformulation over `(W, w0, D)` — per-task weights, shared weight
//! and a trace-bounded PSD feature matrix — optimized by alternating two
//! closed-form steps, then factored back to `(A, a0, U)`.
//!
//! The crate also ships the single-task baselines (ridge, lasso), the
//! shared-features-only variant with `w0` pinned to zero, dataset loading and
//! synthesis, the evaluation metrics (nMSE, aMSE, mAP), a repeated-split
//! experiment harness with validation-based grid search, and a
//! generalization-bound diagnostic.

pub mod baselines;
pub mod bound;
pub mod dataset;
pub mod eval;
pub mod linalg;
pub mod model_io;
pub mod solver;

pub use dataset::{MultiTaskDataset, SplitSpec, SynthSpec, TaskData};
pub use solver::{ConvexSolution, FactoredSolution, FitReport, HyperParams};
