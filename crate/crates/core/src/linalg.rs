//! Dense linear-algebra helpers shared by the objective, flow and network code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{validation, Result};

/// Relative cutoff below which eigen/singular values count as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

/// `‖x‖_r` for `r ≥ 1`, including `r = ∞`.
pub fn norm_r(x: &DVector<f64>, r: f64) -> f64 {
    if r.is_infinite() {
        x.amax()
    } else if r == 1.0 {
        x.iter().map(|v| v.abs()).sum()
    } else if r == 2.0 {
        x.norm()
    } else {
        // Scale by the max magnitude so large exponents do not overflow.
        let m = x.amax();
        if m == 0.0 {
            return 0.0;
        }
        m * x.iter().map(|v| (v.abs() / m).powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue above `RANK_CUTOFF · λ_max` of a symmetric PSD matrix.
pub fn lambda2(m: &DMatrix<f64>) -> Result<f64> {
    let ev = sym_eigenvalues(m);
    let max = ev.last().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return Err(validation("matrix has no positive eigenvalue"));
    }
    let cutoff = RANK_CUTOFF * max;
    ev.into_iter()
        .find(|&v| v > cutoff)
        .ok_or_else(|| validation("matrix has no positive eigenvalue"))
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Numerical rank with singular-value cutoff `RANK_CUTOFF · σ_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let Some(&max) = sv.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_CUTOFF * max).count()
}

/// Moore-Penrose pseudo-inverse via truncated SVD.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.max();
    let cutoff = RANK_CUTOFF * max.max(f64::MIN_POSITIVE);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Dense matrix from row vectors; every row must have the same length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(validation("matrix rows must be nonempty and of equal length"));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn hstack(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + 1);
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.set_column(a.ncols(), b);
    out
}

/// Block-diagonal stacking.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn kron_identity(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    m.kronecker(&DMatrix::identity(k, k))
}

pub fn stack_vectors(parts: &[DVector<f64>]) -> DVector<f64> {
    let v: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    DVector::from_vec(v)
}

/// Solve `H x = g` for symmetric positive-definite `H` via Cholesky, rejecting
/// any pivot below `pivot_tol · max|diag H|`.
pub fn spd_solve(h: &DMatrix<f64>, g: &DVector<f64>, pivot_tol: f64) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let chol = h.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= pivot_tol * scale {
        return None;
    }
    Some(chol.solve(g))
}
