//! PCA over the pooled samples of every task.
//!
//! Fit the projection on training data only and reuse it (via
//! [`PcaProjection::apply`]) on held-out partitions, so no test statistics
//! leak into the features.

use super::{DataError, MultiTaskDataset, TaskData};
use crate::linalg::{eig_sym, SymMatrix};
use nalgebra::{DMatrix, DVector};

/// A fitted mean-centering + top-k projection.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    mean: DVector<f64>,
    /// d×k, columns are the leading eigenvectors of the pooled covariance.
    components: DMatrix<f64>,
    /// All d eigenvalues of the pooled covariance, descending.
    eigenvalues: DVector<f64>,
}

impl PcaProjection {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// The d×k projection matrix.
    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Fraction of pooled variance captured by the k retained components.
    pub fn retained_variance(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        let kept: f64 = self.eigenvalues.iter().take(self.components.ncols()).sum();
        kept / total
    }

    /// Projects a dataset (typically a held-out partition) with this fit.
    pub fn apply(&self, ds: &MultiTaskDataset) -> Result<MultiTaskDataset, DataError> {
        if ds.dim() != self.mean.len() {
            return Err(DataError::DimensionMismatch(format!(
                "projection expects dimension {}, dataset has {}",
                self.mean.len(),
                ds.dim()
            )));
        }
        let tasks = ds
            .tasks()
            .iter()
            .map(|task| {
                let m = task.num_samples();
                let centered =
                    DMatrix::from_fn(m, ds.dim(), |i, j| task.features()[(i, j)] - self.mean[j]);
                TaskData::new(centered * &self.components, task.targets().clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        MultiTaskDataset::new(tasks)
    }
}

/// Reduces the dataset to its top-k principal components.
///
/// The covariance is pooled over all samples of all tasks after mean
/// centering. Returns the reduced dataset together with the projection to
/// apply to held-out data.
pub fn pca_reduce(
    ds: &MultiTaskDataset,
    k: usize,
) -> Result<(MultiTaskDataset, PcaProjection), DataError> {
    let d = ds.dim();
    if k == 0 || k > d {
        return Err(DataError::KTooLarge { k, d });
    }
    let n = ds.total_samples();

    let mut mean = DVector::zeros(d);
    for task in ds.tasks() {
        for i in 0..task.num_samples() {
            for j in 0..d {
                mean[j] += task.features()[(i, j)];
            }
        }
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(d, d);
    for task in ds.tasks() {
        for i in 0..task.num_samples() {
            let x = task.features().row(i).transpose() - &mean;
            // upper triangle only; mirrored below
            for a in 0..d {
                for b in a..d {
                    cov[(a, b)] += x[a] * x[b];
                }
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= n as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }

    let pair = eig_sym(&SymMatrix::new(cov).expect("covariance is symmetric by construction"));
    let components = pair.vectors.columns(0, k).clone_owned();
    let projection = PcaProjection {
        mean,
        components,
        eigenvalues: pair.values,
    };
    let reduced = projection.apply(ds)?;
    Ok((reduced, projection))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_gen, SynthSpec};
    use approx::assert_abs_diff_eq;

    fn toy(d: usize, seed: u64) -> MultiTaskDataset {
        let (ds, _) = synth_gen(&SynthSpec {
            d,
            tasks: 3,
            m_per_task: 40,
            offset_sparsity: 0.5,
            noise_std: 0.2,
            seed,
        })
        .unwrap();
        ds
    }

    #[test]
    fn full_basis_reconstructs_centered_data() {
        let ds = toy(5, 1);
        let (reduced, proj) = pca_reduce(&ds, 5).unwrap();
        for (t, task) in ds.tasks().iter().enumerate() {
            for i in 0..task.num_samples() {
                let z = reduced.task(t).features().row(i).transpose();
                let back = proj.components() * z + proj.mean();
                let x = task.features().row(i).transpose();
                assert!((back - x).abs().max() <= 1e-8);
            }
        }
    }

    #[test]
    fn rank_one_data_needs_one_component() {
        // samples on a line in d=3
        let dir = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut feats = DMatrix::zeros(20, 3);
        for i in 0..20 {
            let s = (i as f64) - 10.0;
            feats.row_mut(i).copy_from(&(&dir * s).transpose());
        }
        let task = TaskData::new(feats, DVector::zeros(20)).unwrap();
        let ds = MultiTaskDataset::new(vec![task]).unwrap();
        let (_, proj) = pca_reduce(&ds, 1).unwrap();
        assert!(proj.retained_variance() >= 1.0 - 1e-10);
    }

    #[test]
    fn retained_variance_matches_eigenvalue_ratio() {
        let ds = toy(8, 3);
        let (reduced, proj) = pca_reduce(&ds, 5).unwrap();

        // independent route: variance of the projected data over total
        let n = ds.total_samples() as f64;
        let mut kept = 0.0;
        for task in reduced.tasks() {
            for i in 0..task.num_samples() {
                kept += task.features().row(i).norm_squared();
            }
        }
        kept /= n;
        let mut total = 0.0;
        let mut mean = DVector::zeros(8);
        for task in ds.tasks() {
            for i in 0..task.num_samples() {
                mean += task.features().row(i).transpose();
            }
        }
        mean /= n;
        for task in ds.tasks() {
            for i in 0..task.num_samples() {
                total += (task.features().row(i).transpose() - &mean).norm_squared();
            }
        }
        total /= n;
        assert_abs_diff_eq!(proj.retained_variance(), kept / total, epsilon = 1e-10);
    }

    #[test]
    fn projection_is_orthonormal() {
        let ds = toy(7, 9);
        let (_, proj) = pca_reduce(&ds, 4).unwrap();
        let ptp = proj.components().transpose() * proj.components();
        assert!((ptp - DMatrix::identity(4, 4)).abs().max() <= 1e-8);
    }

    #[test]
    fn k_bounds_checked() {
        let ds = toy(4, 2);
        assert!(matches!(
            pca_reduce(&ds, 5),
            Err(DataError::KTooLarge { .. })
        ));
        assert!(matches!(
            pca_reduce(&ds, 0),
            Err(DataError::KTooLarge { .. })
        ));
    }
}
