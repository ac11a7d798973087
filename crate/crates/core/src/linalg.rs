//! Dense symmetric-matrix primitives backing the solver: eigendecomposition,
//! PSD square root, pseudoinverse, smoothed roots/inverses and the L2,1 norm.
//!
//! Everything here is a pure function on immutable inputs and safe to call
//! from any number of threads.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Entrywise symmetry tolerance enforced by [`SymMatrix::new`]:
/// `|S[i][j] - S[j][i]| <= 1e-12 * max(1, |S[i][j]|)`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues in `[PSD_EIG_FLOOR, 0)` are treated as floating-point drift of
/// a PSD matrix and clamped to zero; anything below is a genuine violation.
pub const PSD_EIG_FLOOR: f64 = -1e-10;

/// Default relative rank cutoff for [`psd_pinv`]: eigenvalues at or below
/// `DEFAULT_RANK_TOL * lambda_max` count as zero. Scale-free, which matches
/// the trace-normalized matrices the solver feeds through here.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix not symmetric at ({i},{j}): asymmetry {asymmetry:.3e}")]
    NonSymmetric { i: usize, j: usize, asymmetry: f64 },
    #[error("matrix not positive semidefinite: eigenvalue {eigenvalue:.6e}")]
    NotPsd { eigenvalue: f64 },
}

/// A dense real symmetric matrix.
///
/// The constructor rejects asymmetric input instead of silently symmetrizing,
/// so downstream eigendecompositions always see what the caller built.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, verifying squareness and entrywise symmetry.
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        assert_eq!(m.nrows(), m.ncols(), "SymMatrix requires a square matrix");
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                let asymmetry = (m[(i, j)] - m[(j, i)]).abs();
                if asymmetry > SYMMETRY_TOL * m[(i, j)].abs().max(1.0) {
                    return Err(LinalgError::NonSymmetric { i, j, asymmetry });
                }
            }
        }
        Ok(Self(m))
    }

    /// Wraps `(m + m^T) / 2`. Used internally where a product is symmetric in
    /// exact arithmetic but may carry last-bit asymmetry.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "SymMatrix requires a square matrix");
        let half_sum = (&m + m.transpose()) * 0.5;
        Self(half_sum)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// Eigendecomposition of a symmetric matrix: `S = V * diag(values) * V^T`.
///
/// Eigenvalues are sorted descending; each eigenvector's sign is fixed so its
/// largest-magnitude entry is positive, making the decomposition
/// deterministic up to exactly degenerate eigenvalues.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition with descending eigenvalues.
pub fn eig_sym(s: &SymMatrix) -> EigenPair {
    let decomp = s.as_matrix().clone().symmetric_eigen();
    let d = s.dim();

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| decomp.eigenvalues[b].total_cmp(&decomp.eigenvalues[a]));

    let mut values = DVector::zeros(d);
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = decomp.eigenvalues[src];
        let mut col = decomp.eigenvectors.column(src).clone_owned();
        // Sign convention: largest-magnitude entry positive, first index wins.
        let mut lead = 0;
        for i in 1..d {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    EigenPair { values, vectors }
}

/// Eigendecomposition with eigenvalues checked against [`PSD_EIG_FLOOR`] and
/// small negatives clamped to zero.
fn eig_psd(s: &SymMatrix) -> Result<EigenPair, LinalgError> {
    let mut pair = eig_sym(s);
    for v in pair.values.iter_mut() {
        if *v < PSD_EIG_FLOOR {
            return Err(LinalgError::NotPsd { eigenvalue: *v });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(pair)
}

fn from_eigen(pair: &EigenPair, f: impl Fn(f64) -> f64) -> SymMatrix {
    let scaled = DMatrix::from_fn(pair.values.len(), pair.values.len(), |i, j| {
        pair.vectors[(i, j)] * f(pair.values[j])
    });
    SymMatrix::symmetrized(scaled * pair.vectors.transpose())
}

/// PSD square root: the unique PSD `R` with `R * R = S`.
pub fn psd_sqrt(s: &SymMatrix) -> Result<SymMatrix, LinalgError> {
    let pair = eig_psd(s)?;
    Ok(from_eigen(&pair, f64::sqrt))
}

/// Moore–Penrose pseudoinverse of a PSD matrix. Eigenvalues at or below
/// `rank_tol * lambda_max` are treated as exact zeros.
pub fn psd_pinv(s: &SymMatrix, rank_tol: f64) -> Result<SymMatrix, LinalgError> {
    assert!(rank_tol > 0.0, "rank_tol must be positive");
    let pair = eig_psd(s)?;
    let cutoff = rank_tol * pair.values.max().max(0.0);
    Ok(from_eigen(
        &pair,
        |v| if v > cutoff { 1.0 / v } else { 0.0 },
    ))
}

/// Smoothed stand-in for `(S^+)^{-1/2}`: returns `(S + eps*I)^{1/2}`, which is
/// full rank for any PSD `S` and any `eps > 0`.
pub fn psd_inv_sqrt_smoothed(s: &SymMatrix, eps: f64) -> Result<SymMatrix, LinalgError> {
    assert!(eps > 0.0, "eps must be positive");
    let pair = eig_psd(s)?;
    Ok(from_eigen(&pair, |v| (v + eps).sqrt()))
}

/// Smoothed pseudoinverse `(S + eps*I)^{-1}`.
pub fn psd_inv_smoothed(s: &SymMatrix, eps: f64) -> Result<SymMatrix, LinalgError> {
    assert!(eps > 0.0, "eps must be positive");
    let pair = eig_psd(s)?;
    Ok(from_eigen(&pair, |v| 1.0 / (v + eps)))
}

/// L2,1 norm: the sum over matrix rows of each row's Euclidean norm.
pub fn l21_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows()).map(|i| a.row(i).norm()).sum()
}
