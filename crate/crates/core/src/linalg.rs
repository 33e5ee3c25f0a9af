//! Small dense linear algebra on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::math;

/// Absolute accuracy targeted by [`expm`].
pub const EXPM_TOL: f64 = 1e-12;

fn norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square());
    let n = a.nrows();
    let norm = norm1(a);
    let squarings = if norm > 0.5 { math::ceil(math::log2(norm / 0.5)) as u32 } else { 0 };
    let scaled = a / libm::ldexp(1.0, squarings as i32);
    // Each squaring can at most double the absolute error of the series;
    // the extra factor keeps the truncation well below the target.
    let tol = 1e-4 * EXPM_TOL / libm::ldexp(1.0, squarings as i32 + 1);
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..200 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if norm1(&term) < tol {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Least-squares solution `x = a^+ b` by singular value decomposition.
#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub x: DMatrix<f64>,
    /// Number of singular values kept.
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Minimum-norm least-squares solve; singular values below
/// `rel_cutoff * sigma_max` are treated as zero.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_cutoff: f64) -> LstsqSolution {
    assert_eq!(a.nrows(), b.nrows());
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return LstsqSolution { x: DMatrix::zeros(n, b.ncols()), rank: 0, singular_values: Vec::new() };
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V^T requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_cutoff * smax;
    let utb = u.transpose() * b;
    let mut scaled = DMatrix::<f64>::zeros(sv.len(), b.ncols());
    let mut rank = 0;
    for (i, &s) in sv.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            for j in 0..b.ncols() {
                scaled[(i, j)] = utb[(i, j)] / s;
            }
        }
    }
    let x = v_t.transpose() * scaled;
    LstsqSolution { x, rank, singular_values: sv }
}

/// Eigen-decomposition of a symmetric matrix given row-major.
pub fn symmetric_eigen(a: &[f64], dim: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = DMatrix::from_row_slice(dim, dim, a);
    // Symmetrize against round-off in the inputs.
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}
