//! Small dense linear-algebra helpers shared by the solvers.
//!
//! The weighted least-squares path accumulates the normal equations by hand
//! (upper triangle only, skipping zero weights) and factors them with
//! Cholesky; a column-pivoted QR on the weighted design is the fallback when
//! the normal equations are numerically indefinite. Problem sizes here are
//! tiny (p <= ~30), so normal equations are both safe and markedly faster
//! than a QR of the full n x p matrix.

use crate::error::{PlamError, Result};
use nalgebra::{DMatrix, DVector};

/// Reusable buffers for the iterated weighted least-squares solves.
pub struct WlsWorkspace {
    ata: DMatrix<f64>,
    aty: DVector<f64>,
}

impl WlsWorkspace {
    pub fn new(p: usize) -> Self {
        Self {
            ata: DMatrix::zeros(p, p),
            aty: DVector::zeros(p),
        }
    }
}

/// Solve `argmin_b sum_i w_i (y_i - a_i^T b)^2`.
///
/// Returns `None` when the weighted normal equations are singular even for
/// the QR fallback. Weights must be non-negative; rows with zero weight do
/// not contribute.
pub fn solve_wls(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &[f64],
    ws: &mut WlsWorkspace,
) -> Option<DVector<f64>> {
    let (n, p) = (a.nrows(), a.ncols());
    debug_assert_eq!(w.len(), n);
    ws.ata.fill(0.0);
    ws.aty.fill(0.0);

    for i in 0..n {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let row = a.row(i);
        let wy = wi * y[i];
        for c in 0..p {
            let rc = row[c];
            ws.aty[c] += wy * rc;
            let wrc = wi * rc;
            for c2 in c..p {
                ws.ata[(c, c2)] += wrc * row[c2];
            }
        }
    }
    for c in 0..p {
        for c2 in (c + 1)..p {
            ws.ata[(c2, c)] = ws.ata[(c, c2)];
        }
    }

    if let Some(chol) = ws.ata.clone().cholesky() {
        return Some(chol.solve(&ws.aty));
    }

    // fall back to QR on the sqrt-weighted design
    let mut aw = a.clone();
    let mut yw = y.clone();
    for i in 0..n {
        let s = w[i].sqrt();
        aw.row_mut(i).scale_mut(s);
        yw[i] *= s;
    }
    let qr = aw.col_piv_qr();
    qr.solve(&yw)
}

/// Ordinary least squares via column-pivoted QR.
pub fn solve_ls(a: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().col_piv_qr().solve(y)
}

/// Solve the square system `a x = y`, returning the solution together with a
/// crude condition estimate from the QR diagonal. `None` when singular.
pub fn solve_square_with_cond(a: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let p = r.nrows().min(r.ncols());
    let mut dmax: f64 = 0.0;
    let mut dmin = f64::INFINITY;
    for i in 0..p {
        let d = r[(i, i)].abs();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    if dmin == 0.0 {
        return None;
    }
    qr.solve(y).map(|x| (x, dmax / dmin))
}

/// Inverse of a symmetric positive-definite-ish matrix via its eigenvalue
/// decomposition, symmetrized on the way out.
///
/// Errors when the matrix is numerically singular; `cond` above 1e10 is
/// reported back to the caller through the returned flag.
pub fn sym_inverse(m: &DMatrix<f64>, name: &'static str) -> Result<(DMatrix<f64>, f64)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min_abs = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    if max_abs == 0.0 || min_abs / max_abs < 1e-14 {
        return Err(PlamError::SingularMatrix {
            matrix: name,
            cond: if min_abs == 0.0 {
                f64::INFINITY
            } else {
                max_abs / min_abs
            },
        });
    }
    let mut inv = DMatrix::zeros(m.nrows(), m.ncols());
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        let scale = 1.0 / lam;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                inv[(r, c)] += scale * v[r] * v[c];
            }
        }
    }
    let inv = (&inv + inv.transpose()) * 0.5;
    Ok((inv, max_abs / min_abs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn wls_matches_scaled_ls() {
        let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.5, 1.0, 1.5, 1.0, 2.5, 1.0, 3.5, 1.0, 4.5]);
        let y = DVector::from_row_slice(&[1.0, 2.0, 2.5, 4.0, 4.4]);
        let w = [1.0, 2.0, 0.0, 0.5, 3.0];
        let mut ws = WlsWorkspace::new(2);
        let beta = solve_wls(&a, &y, &w, &mut ws).unwrap();

        let mut aw = a.clone();
        let mut yw = y.clone();
        for i in 0..5 {
            aw.row_mut(i).scale_mut(w[i].sqrt());
            yw[i] *= w[i].sqrt();
        }
        let expect = aw.col_piv_qr().solve(&yw).unwrap();
        assert_abs_diff_eq!((beta - expect).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sym_inverse_roundtrip() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (inv, cond) = sym_inverse(&m, "test").unwrap();
        let id = &m * &inv;
        assert_abs_diff_eq!(id[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id[(0, 1)], 0.0, epsilon = 1e-12);
        assert!(cond < 10.0);
        assert!(sym_inverse(&DMatrix::zeros(2, 2), "zero").is_err());
    }
}
