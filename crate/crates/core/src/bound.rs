//! Post-fit generalization-bound diagnostic.
//!
//! Computes the three terms of the excess-risk bound for the joint learner:
//! an offset-learning term `2cr / sqrt(gamma m)`, a shared-hyperplane term
//! `2cr / sqrt(beta m T)` that shrinks with the task count, and a
//! concentration term `3B sqrt(ln(2/delta) / (2mT))`.
//!
//! The admissibility constant `c` and loss bound `B` have no canonical
//! data-driven values for the squared loss (which is neither bounded nor
//! globally Lipschitz), so they are caller-supplied; the report is a
//! diagnostic, not a certificate. `r` can be estimated from data with
//! [`estimate_feature_norm_bound`].

use crate::dataset::{MultiTaskDataset, TaskData};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("invalid bound input: {0}")]
    InvalidInput(String),
}

/// Inputs of the bound. `m` is the per-task sample count (the bound assumes
/// equal task sizes) and `tasks` the task count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Loss admissibility (Lipschitz-like) constant `c`.
    pub admissibility: f64,
    /// Upper bound `B` on the loss.
    pub loss_bound: f64,
    /// Feature-norm bound `r` with `||x||_2 <= r`.
    pub feature_norm_bound: f64,
    /// Failure probability `delta` in (0, 1).
    pub delta: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Samples per task `m`.
    pub samples_per_task: usize,
    pub tasks: usize,
}

impl BoundInputs {
    fn validate(&self) -> Result<(), BoundError> {
        for (name, v) in [
            ("admissibility", self.admissibility),
            ("loss_bound", self.loss_bound),
            ("feature_norm_bound", self.feature_norm_bound),
            ("gamma", self.gamma),
            ("beta", self.beta),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(BoundError::InvalidInput(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(BoundError::InvalidInput(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if self.samples_per_task == 0 || self.tasks == 0 {
            return Err(BoundError::InvalidInput(
                "samples_per_task and tasks must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// The three bound terms and their sum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `2cr / sqrt(gamma m)` — learning the per-task offsets.
    pub offsets_term: f64,
    /// `2cr / sqrt(beta m T)` — learning the shared hyperplane.
    pub shared_term: f64,
    /// `3B sqrt(ln(2/delta) / (2mT))` — concentration.
    pub concentration_term: f64,
    pub total: f64,
}

/// Evaluates the bound terms.
pub fn generalization_bound(inputs: &BoundInputs) -> Result<BoundTerms, BoundError> {
    inputs.validate()?;
    let c = inputs.admissibility;
    let r = inputs.feature_norm_bound;
    let b = inputs.loss_bound;
    let m = inputs.samples_per_task as f64;
    let t = inputs.tasks as f64;

    let offsets_term = 2.0 * c * r / (inputs.gamma * m).sqrt();
    let shared_term = 2.0 * c * r / (inputs.beta * m * t).sqrt();
    let concentration_term = 3.0 * b * ((2.0 / inputs.delta).ln() / (2.0 * m * t)).sqrt();
    Ok(BoundTerms {
        offsets_term,
        shared_term,
        concentration_term,
        total: offsets_term + shared_term + concentration_term,
    })
}

/// Per-task empirical covariance trace `(1/m) * sum_i ||x_i||^2`.
pub fn empirical_cov_trace(task: &TaskData) -> f64 {
    let f = task.features();
    let sum: f64 = (0..f.nrows()).map(|i| f.row(i).norm_squared()).sum();
    sum / f.nrows() as f64
}

/// Largest sample norm in the dataset; a data-driven estimate of `r`.
pub fn estimate_feature_norm_bound(ds: &MultiTaskDataset) -> f64 {
    ds.tasks()
        .iter()
        .flat_map(|task| (0..task.num_samples()).map(|i| task.features().row(i).norm()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{MultiTaskDataset, TaskData};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn inputs(gamma: f64, beta: f64, m: usize, tasks: usize) -> BoundInputs {
        BoundInputs {
            admissibility: 1.0,
            loss_bound: 1.0,
            feature_norm_bound: 1.0,
            delta: 0.05,
            gamma,
            beta,
            samples_per_task: m,
            tasks,
        }
    }

    #[test]
    fn cov_trace_examples() {
        let task = TaskData::new(DMatrix::zeros(3, 2), DVector::zeros(3)).unwrap();
        assert_abs_diff_eq!(empirical_cov_trace(&task), 0.0, epsilon = 0.0);

        let task = TaskData::new(
            DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
            DVector::zeros(1),
        )
        .unwrap();
        assert_abs_diff_eq!(empirical_cov_trace(&task), 25.0, epsilon = 1e-12);
    }

    #[test]
    fn cov_trace_matches_second_moment_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = DMatrix::from_fn(9, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let task = TaskData::new(f.clone(), DVector::zeros(9)).unwrap();
        // trace of (1/m) F^T F
        let second_moment = (f.transpose() * &f) / 9.0;
        assert_abs_diff_eq!(
            empirical_cov_trace(&task),
            second_moment.trace(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn hand_value_at_all_ones() {
        let mut input = inputs(1.0, 1.0, 1, 1);
        input.delta = 2.0 / std::f64::consts::E; // ln(2/delta) = 1
        let terms = generalization_bound(&input).unwrap();
        assert_abs_diff_eq!(terms.offsets_term, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(terms.shared_term, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(terms.concentration_term, 3.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(terms.total, 2.0 + 2.0 + 3.0 / 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn doubling_tasks_scales_only_the_shared_term() {
        let base = generalization_bound(&inputs(2.0, 3.0, 10, 4)).unwrap();
        let doubled = generalization_bound(&inputs(2.0, 3.0, 10, 8)).unwrap();
        assert_abs_diff_eq!(doubled.offsets_term, base.offsets_term, epsilon = 0.0);
        assert_abs_diff_eq!(
            doubled.shared_term * 2f64.sqrt(),
            base.shared_term,
            epsilon = 1e-15
        );
    }

    #[test]
    fn quadrupling_tasks_halves_the_shared_term_exactly() {
        for tasks in [1usize, 3, 7, 25] {
            let base = generalization_bound(&inputs(5.0, 0.7, 13, tasks)).unwrap();
            let quad = generalization_bound(&inputs(5.0, 0.7, 13, 4 * tasks)).unwrap();
            assert_eq!(quad.shared_term * 2.0, base.shared_term);
        }
    }

    #[test]
    fn school_scale_matches_independent_arithmetic() {
        let input = inputs(1000.0, 1.0, 22, 139);
        let terms = generalization_bound(&input).unwrap();
        // independent arithmetic with a different operation order
        let expected_offsets = 2.0 / (1000.0f64.sqrt() * 22.0f64.sqrt());
        let expected_shared = 2.0 / (22.0f64 * 139.0).sqrt();
        let expected_conc = 3.0 * ((2.0f64 / 0.05).ln()).sqrt() / (2.0f64 * 22.0 * 139.0).sqrt();
        assert_abs_diff_eq!(terms.offsets_term, expected_offsets, epsilon = 1e-10);
        assert_abs_diff_eq!(terms.shared_term, expected_shared, epsilon = 1e-10);
        assert_abs_diff_eq!(terms.concentration_term, expected_conc, epsilon = 1e-10);
        assert_abs_diff_eq!(
            terms.total,
            expected_offsets + expected_shared + expected_conc,
            epsilon = 1e-10
        );
    }

    #[test]
    fn monotonicity_in_every_input() {
        let reference = inputs(2.0, 3.0, 10, 4);
        let base = generalization_bound(&reference).unwrap().total;

        let grow = |f: &dyn Fn(&mut BoundInputs)| {
            let mut input = reference.clone();
            f(&mut input);
            generalization_bound(&input).unwrap().total
        };
        // decreasing in gamma, beta, m, T
        assert!(grow(&|i| i.gamma *= 4.0) < base);
        assert!(grow(&|i| i.beta *= 4.0) < base);
        assert!(grow(&|i| i.samples_per_task *= 4) < base);
        assert!(grow(&|i| i.tasks *= 4) < base);
        // increasing in c, B, r
        assert!(grow(&|i| i.admissibility *= 2.0) > base);
        assert!(grow(&|i| i.loss_bound *= 2.0) > base);
        assert!(grow(&|i| i.feature_norm_bound *= 2.0) > base);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(generalization_bound(&inputs(0.0, 1.0, 1, 1)).is_err());
        let mut input = inputs(1.0, 1.0, 1, 1);
        input.delta = 1.5;
        assert!(generalization_bound(&input).is_err());
        input = inputs(1.0, 1.0, 1, 1);
        input.tasks = 0;
        assert!(generalization_bound(&input).is_err());
    }

    #[test]
    fn feature_norm_estimate() {
        let t0 = TaskData::new(
            DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let t1 = TaskData::new(
            DMatrix::from_row_slice(1, 2, &[6.0, 8.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let ds = MultiTaskDataset::new(vec![t0, t1]).unwrap();
        assert_abs_diff_eq!(estimate_feature_norm_bound(&ds), 10.0, epsilon = 1e-12);
    }
}
