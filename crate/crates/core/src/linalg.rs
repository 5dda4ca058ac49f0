//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Pivot tolerance used when deciding semidefiniteness by factorization.
pub const PSD_PIVOT_TOL: f64 = 1e-10;

/// Builds a matrix from nested rows. All rows must have equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn frobenius(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = 1.0 + frobenius(m);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Outcome of a semidefiniteness test: the factorization verdict and the
/// smallest eigenvalue as a margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdCheck {
    pub holds: bool,
    pub margin: f64,
}

/// Decides `m ⪰ 0` by attempting a Cholesky factorization of `m + τI` with
/// `τ = PSD_PIVOT_TOL·(1 + ‖m‖_F)`.
pub fn check_psd(m: &Mat) -> PsdCheck {
    let s = symmetrize(m);
    let n = s.nrows();
    if n == 0 {
        return PsdCheck { holds: true, margin: 0.0 };
    }
    let tau = PSD_PIVOT_TOL * (1.0 + frobenius(&s));
    let shifted = &s + Mat::identity(n, n) * tau;
    let holds = shifted.cholesky().is_some();
    PsdCheck {
        holds,
        margin: min_eigenvalue(&s),
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_lower(m: &Mat) -> Result<Mat> {
    symmetrize(m)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("matrix is not positive definite".into()))
}

/// Largest eigenvalue of the pencil `(S, M)` for symmetric `S` and SPD `M`,
/// i.e. `max_x xᵀSx / xᵀMx`.
pub fn max_generalized_eigenvalue(s: &Mat, m: &Mat) -> Result<f64> {
    let l = cholesky_lower(m)?;
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?;
    let reduced = &l_inv * symmetrize(s) * l_inv.transpose();
    Ok(max_eigenvalue(&reduced))
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    max_eigenvalue(&(m.transpose() * m)).max(0.0).sqrt()
}
