//! Synthetic data whose ground truth is exactly representable by the model
//! class: an orthogonal feature map, a shared hyperplane and row-sparse
//! per-task offsets.

use super::{DataError, MultiTaskDataset, TaskData};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub d: usize,
    #[serde(alias = "t")]
    pub tasks: usize,
    pub m_per_task: usize,
    /// Fraction of feature rows carrying nonzero per-task offsets.
    pub offset_sparsity: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// The generating parameters behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// d×T per-task offsets; rows outside the sparse support are exactly 0.
    pub offsets: DMatrix<f64>,
    /// Shared hyperplane in the transformed space.
    pub shared: DVector<f64>,
    /// Orthogonal feature map (d×d).
    pub feature_map: DMatrix<f64>,
}

impl GroundTruth {
    /// Noise-free response of task `t` at `x`.
    pub fn predict(&self, x: &DVector<f64>, t: usize) -> f64 {
        let z = self.feature_map.transpose() * x;
        (self.offsets.column(t) + &self.shared).dot(&z)
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), DataError> {
        if self.d == 0 || self.tasks == 0 || self.m_per_task == 0 {
            return Err(DataError::InvalidSpec(
                "d, tasks and m_per_task must all be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.offset_sparsity) {
            return Err(DataError::InvalidSpec(format!(
                "offset_sparsity {} not in [0,1]",
                self.offset_sparsity
            )));
        }
        if self.noise_std < 0.0 {
            return Err(DataError::InvalidSpec("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Deterministic Fisher–Yates driven by the given stream.
pub(crate) fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    // column-major fill so draw order is independent of how callers index
    let data: Vec<f64> = (0..r * c).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(r, c, data)
}

/// Orthogonal matrix from the QR factorization of a Gaussian draw, with the
/// sign convention diag(R) > 0 so the result is unique.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, d, d).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Generates a dataset from the linear multi-task model with a known ground
/// truth. Bit-identical output for a fixed spec.
pub fn synth_gen(spec: &SynthSpec) -> Result<(MultiTaskDataset, GroundTruth), DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, t) = (spec.d, spec.tasks);

    let feature_map = random_orthogonal(&mut rng, d);
    let shared = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));

    let support_size = (spec.offset_sparsity * d as f64).round() as usize;
    let mut rows: Vec<usize> = (0..d).collect();
    shuffle(&mut rows, &mut rng);
    let mut support = rows[..support_size].to_vec();
    support.sort_unstable();

    let mut offsets = DMatrix::zeros(d, t);
    for &row in &support {
        for col in 0..t {
            offsets[(row, col)] = rng.sample(StandardNormal);
        }
    }

    let truth = GroundTruth {
        offsets,
        shared,
        feature_map,
    };

    let mut tasks = Vec::with_capacity(t);
    for task in 0..t {
        let mut features = DMatrix::zeros(spec.m_per_task, d);
        let mut targets = DVector::zeros(spec.m_per_task);
        for i in 0..spec.m_per_task {
            let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise: f64 = rng.sample(StandardNormal);
            targets[i] = truth.predict(&x, task) + spec.noise_std * noise;
            features.row_mut(i).copy_from(&x.transpose());
        }
        tasks.push(TaskData::new(features, targets).expect("generated task is valid"));
    }
    Ok((MultiTaskDataset::new(tasks)?, truth))
}
