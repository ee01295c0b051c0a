//! Centered B-spline bases and regression design assembly.
//!
//! Each additive component is approximated in a B-spline basis of order
//! `l` (degree `l - 1`) with `k` elements on the observed range of the
//! covariate. The raw basis forms a partition of unity; subtracting each
//! element's mean over the interval makes the basis sum to zero pointwise
//! and gives every element a zero integral, so any fitted component
//! integrates to zero. Dropping the last (now redundant) column yields a
//! well conditioned design alongside the intercept.

use crate::error::{PlamError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Placement rule for the interior knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotMode {
    /// Equispaced interior knots on the observed range.
    Uniform,
    /// Interior knots at the `l/(N+1)` empirical quantiles, `l = 1..N`.
    Quantile,
}

/// Type-7 empirical quantile (linear interpolation of order statistics).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let g = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - g) + sorted[lo + 1] * g
    }
}

/// A B-spline basis of order `order` with `k` elements, centered so that
/// every element has zero mean over `[lo, hi]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CenteredSplineBasis {
    order: usize,
    k: usize,
    /// Padded knot vector of length `k + order`.
    knots: Vec<f64>,
    lo: f64,
    hi: f64,
    /// Mean of each raw element over `[lo, hi]`: `(t_{s+l} - t_s) / (l (hi - lo))`.
    centers: Vec<f64>,
}

impl CenteredSplineBasis {
    /// Build a basis of dimension `k >= order` on the range of `x_values`.
    ///
    /// `k - order` interior knots are placed according to `mode`; boundary
    /// knots sit at the observed min and max with multiplicity `order`.
    pub fn build(x_values: &[f64], order: usize, k: usize, mode: KnotMode) -> Result<Self> {
        assert!(order >= 2, "spline order must be at least 2");
        if k < order {
            return Err(PlamError::BasisTooSmall { k, order });
        }
        let lo = x_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < hi) {
            return Err(PlamError::DegenerateCovariate);
        }

        let n_interior = k - order;
        let mut interior = Vec::with_capacity(n_interior);
        match mode {
            KnotMode::Uniform => {
                for i in 1..=n_interior {
                    interior.push(lo + (hi - lo) * i as f64 / (n_interior + 1) as f64);
                }
            }
            KnotMode::Quantile => {
                let mut sorted = x_values.to_vec();
                sorted.sort_by(f64::total_cmp);
                for i in 1..=n_interior {
                    interior.push(quantile(&sorted, i as f64 / (n_interior + 1) as f64));
                }
            }
        }
        for &t in &interior {
            if !(t > lo && t < hi) {
                return Err(PlamError::KnotOutsideInterval { value: t, lo, hi });
            }
        }

        let mut knots = Vec::with_capacity(k + order);
        knots.extend(std::iter::repeat(lo).take(order));
        knots.extend(interior);
        knots.extend(std::iter::repeat(hi).take(order));

        let centers = (0..k)
            .map(|s| (knots[s + order] - knots[s]) / (order as f64 * (hi - lo)))
            .collect();

        Ok(Self {
            order,
            k,
            knots,
            lo,
            hi,
            centers,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Basis dimension `k`.
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of columns contributed to the design: `k - 1`.
    pub fn reduced_len(&self) -> usize {
        self.k - 1
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// All `k` raw (uncentered) elements at `x`, clamped to `[lo, hi]`.
    ///
    /// De Boor's recurrence on the knot span containing `x`; the last span
    /// is treated as closed so the partition of unity also holds at `hi`.
    pub fn eval_raw(&self, x: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.k);
        out.fill(0.0);
        let x = x.clamp(self.lo, self.hi);
        let ord = self.order;
        // span index mu with knots[mu] <= x < knots[mu+1], clamped to the
        // last non-empty interval when x == hi
        let mut mu = ord - 1;
        while mu + 1 < self.k && x >= self.knots[mu + 1] {
            mu += 1;
        }
        if mu > self.k - 1 {
            mu = self.k - 1;
        }

        // triangular recurrence: vals[j] holds B_{mu-d+j} of degree d
        let mut vals = [0.0f64; 32];
        assert!(ord <= 32, "spline order too large");
        vals[0] = 1.0;
        for d in 1..ord {
            let mut saved = 0.0;
            for j in 0..d {
                let idx = mu - d + 1 + j;
                let denom = self.knots[idx + d] - self.knots[idx];
                let term = if denom > 0.0 { vals[j] / denom } else { 0.0 };
                vals[j] = saved + (self.knots[idx + d] - x) * term;
                saved = (x - self.knots[idx]) * term;
            }
            vals[d] = saved;
        }
        for j in 0..ord {
            let s = mu + 1 - ord + j;
            if s < self.k {
                out[s] = vals[j];
            }
        }
    }

    /// All `k` centered elements at `x`.
    pub fn eval_centered(&self, x: f64, out: &mut [f64]) {
        self.eval_raw(x, out);
        for (v, c) in out.iter_mut().zip(&self.centers) {
            *v -= c;
        }
    }

    /// First `k - 1` centered elements at `x`; the design row block.
    pub fn eval_reduced(&self, x: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.k - 1);
        let mut full = vec![0.0; self.k];
        self.eval_centered(x, &mut full);
        out.copy_from_slice(&full[..self.k - 1]);
    }

    /// Component value `sum_s coef[s] * B_s(x)` for reduced coefficients.
    pub fn component_value(&self, coef: &[f64], x: f64) -> f64 {
        assert_eq!(coef.len(), self.k - 1);
        let mut full = vec![0.0; self.k];
        self.eval_centered(x, &mut full);
        coef.iter().zip(&full).map(|(c, b)| c * b).sum()
    }
}

/// Regression design `[1 | Z | V^(1) | ... | V^(p)]`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    /// Number of linear covariates.
    pub q: usize,
    /// Reduced block width `k_j - 1` per smooth covariate.
    pub block_dims: Vec<usize>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Total column count `1 + q + K`.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `K = sum_j (k_j - 1)`.
    pub fn spline_cols(&self) -> usize {
        self.block_dims.iter().sum()
    }

    /// Degrees-of-freedom correction `q + K` used by the M-scale.
    pub fn dof_correction(&self) -> usize {
        self.cols() - 1
    }
}

/// Assemble the design from linear covariates `z` (n x q), smooth
/// covariates `x` (n x p) and one basis per smooth covariate.
pub fn assemble_design(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    bases: &[CenteredSplineBasis],
) -> Result<DesignMatrix> {
    let n = z.nrows().max(x.nrows());
    if z.nrows() != n && z.ncols() > 0 {
        return Err(PlamError::RowMismatch {
            left: z.nrows(),
            right: n,
        });
    }
    if x.nrows() != n && x.ncols() > 0 {
        return Err(PlamError::RowMismatch {
            left: x.nrows(),
            right: n,
        });
    }
    if x.ncols() != bases.len() {
        return Err(PlamError::DimensionMismatch {
            expected: x.ncols(),
            got: bases.len(),
        });
    }

    let block_dims: Vec<usize> = bases.iter().map(|b| b.reduced_len()).collect();
    let total = 1 + z.ncols() + block_dims.iter().sum::<usize>();
    let mut m = DMatrix::zeros(n, total);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        for c in 0..z.ncols() {
            m[(i, 1 + c)] = z[(i, c)];
        }
        let mut offset = 1 + z.ncols();
        for (j, basis) in bases.iter().enumerate() {
            let width = basis.reduced_len();
            let mut row = vec![0.0; width];
            basis.eval_reduced(x[(i, j)], &mut row);
            for (c, v) in row.iter().enumerate() {
                m[(i, offset + c)] = *v;
            }
            offset += width;
        }
    }

    Ok(DesignMatrix {
        matrix: m,
        q: z.ncols(),
        block_dims,
    })
}

/// Evaluate one design row for new data; used by prediction.
pub fn design_row(
    z_row: &[f64],
    x_row: &[f64],
    bases: &[CenteredSplineBasis],
    out: &mut DVector<f64>,
) {
    out[0] = 1.0;
    for (c, v) in z_row.iter().enumerate() {
        out[1 + c] = *v;
    }
    let mut offset = 1 + z_row.len();
    for (j, basis) in bases.iter().enumerate() {
        let width = basis.reduced_len();
        let mut row = vec![0.0; width];
        basis.eval_reduced(x_row[j], &mut row);
        for (c, v) in row.iter().enumerate() {
            out[offset + c] = *v;
        }
        offset += width;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn bernstein_case_matches_closed_form() {
        // order 4, k = 4 on [0,1]: no interior knots, the basis is the
        // cubic Bernstein one: C(3,s) x^s (1-x)^(3-s)
        let x = grid(50, 0.0, 1.0);
        let basis = CenteredSplineBasis::build(&x, 4, 4, KnotMode::Uniform).unwrap();
        let binom = [1.0, 3.0, 3.0, 1.0];
        let mut raw = vec![0.0; 4];
        for &t in &grid(1000, 0.0, 1.0) {
            basis.eval_raw(t, &mut raw);
            let mut sum = 0.0;
            for s in 0..4 {
                let expect = binom[s] * t.powi(s as i32) * (1.0 - t).powi(3 - s as i32);
                assert_abs_diff_eq!(raw[s], expect, epsilon = 1e-12);
                sum += raw[s];
            }
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
        // centers are 1/4 each: (t_{s+4}-t_s)/4 = 1/4 on [0,1]
        for c in basis.centers() {
            assert_abs_diff_eq!(*c, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn uniform_interior_knots() {
        let x = grid(100, 0.0, 1.0);
        let basis = CenteredSplineBasis::build(&x, 4, 6, KnotMode::Uniform).unwrap();
        let interior = &basis.knots()[4..basis.knots().len() - 4];
        assert_eq!(interior.len(), 2);
        assert_abs_diff_eq!(interior[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(interior[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn partition_of_unity_and_zero_sum() {
        let x = grid(200, -2.0, 5.0);
        for k in [4usize, 7, 13] {
            let basis = CenteredSplineBasis::build(&x, 4, k, KnotMode::Uniform).unwrap();
            let mut raw = vec![0.0; k];
            let mut cen = vec![0.0; k];
            for &t in &grid(1000, -2.0, 5.0) {
                basis.eval_raw(t, &mut raw);
                assert_abs_diff_eq!(raw.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                basis.eval_centered(t, &mut cen);
                assert_abs_diff_eq!(cen.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
                // the reduced row sums to -B_k(t)
                let reduced_sum: f64 = cen[..k - 1].iter().sum();
                assert_abs_diff_eq!(reduced_sum, -cen[k - 1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn centered_elements_have_zero_integral() {
        // Simpson quadrature of each centered element over [lo, hi]
        let x = grid(111, 10.0, 97.0);
        let basis = CenteredSplineBasis::build(&x, 4, 5, KnotMode::Quantile).unwrap();
        let (lo, hi) = basis.interval();
        let m = 4000;
        let h = (hi - lo) / m as f64;
        let mut vals = vec![0.0; 5];
        let mut integrals = vec![0.0; 5];
        for i in 0..=m {
            let t = lo + i as f64 * h;
            basis.eval_centered(t, &mut vals);
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            for (acc, v) in integrals.iter_mut().zip(&vals) {
                *acc += w * v;
            }
        }
        for acc in &integrals {
            assert!((acc * h / 3.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn reduced_and_full_representations_agree() {
        // eta(x) = sum_{s<k} c_s B_s(x) equals sum_{s<=k} lambda_s B_s(x)
        // with lambda_s = c_s + lambda_k for any lambda_k
        let x = grid(60, 0.0, 1.0);
        let k = 7;
        let basis = CenteredSplineBasis::build(&x, 4, k, KnotMode::Uniform).unwrap();
        let coef: Vec<f64> = (0..k - 1).map(|s| (s as f64 * 0.7).sin()).collect();
        let lambda_k = 2.31;
        let lambda: Vec<f64> = coef
            .iter()
            .map(|c| c + lambda_k)
            .chain(std::iter::once(lambda_k))
            .collect();
        let mut full = vec![0.0; k];
        for &t in &grid(300, 0.0, 1.0) {
            basis.eval_centered(t, &mut full);
            let via_full: f64 = lambda.iter().zip(&full).map(|(l, b)| l * b).sum();
            assert_abs_diff_eq!(basis.component_value(&coef, t), via_full, epsilon = 1e-12);
        }
    }

    #[test]
    fn continuity_at_interior_knots() {
        let x = grid(80, 0.0, 1.0);
        for order in [2usize, 3, 4] {
            let basis = CenteredSplineBasis::build(&x, order, order + 3, KnotMode::Uniform).unwrap();
            let interior: Vec<f64> = basis.knots()[order..order + 3].to_vec();
            let mut left = vec![0.0; basis.len()];
            let mut right = vec![0.0; basis.len()];
            for t in interior {
                basis.eval_centered(t - 1e-12, &mut left);
                basis.eval_centered(t + 1e-12, &mut right);
                for (a, b) in left.iter().zip(&right) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn evaluation_clamps_outside_range() {
        let x = grid(30, 0.0, 1.0);
        let basis = CenteredSplineBasis::build(&x, 4, 5, KnotMode::Uniform).unwrap();
        let mut at_edge = vec![0.0; 4];
        let mut outside = vec![0.0; 4];
        basis.eval_reduced(1.0, &mut at_edge);
        basis.eval_reduced(7.5, &mut outside);
        assert_eq!(at_edge, outside);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(matches!(
            CenteredSplineBasis::build(&[1.0; 10], 4, 5, KnotMode::Uniform),
            Err(PlamError::DegenerateCovariate)
        ));
        let x = grid(10, 0.0, 1.0);
        assert!(matches!(
            CenteredSplineBasis::build(&x, 4, 3, KnotMode::Uniform),
            Err(PlamError::BasisTooSmall { .. })
        ));
    }

    #[test]
    fn design_layout() {
        let n = 5;
        let z = DMatrix::from_fn(n, 2, |i, j| (i + j) as f64);
        let x = DMatrix::from_fn(n, 2, |i, j| i as f64 / 4.0 + j as f64 * 0.01);
        let bases: Vec<_> = (0..2)
            .map(|j| {
                CenteredSplineBasis::build(x.column(j).as_slice(), 4, 4, KnotMode::Uniform).unwrap()
            })
            .collect();
        let d = assemble_design(&z, &x, &bases).unwrap();
        assert_eq!(d.cols(), 1 + 2 + 3 + 3);
        assert_eq!(d.dof_correction(), 8);

        // p = 0 degenerates to a plain linear design
        let d0 = assemble_design(&z, &DMatrix::zeros(n, 0), &[]).unwrap();
        assert_eq!(d0.cols(), 3);

        // Model-1 sized layout with the largest candidate dimension
        let z1 = DMatrix::from_fn(100, 2, |i, _| i as f64 / 100.0);
        let x1 = DMatrix::from_fn(100, 2, |i, j| (i as f64 + 0.5 + j as f64) / 101.0);
        let bases1: Vec<_> = (0..2)
            .map(|j| {
                CenteredSplineBasis::build(x1.column(j).as_slice(), 4, 13, KnotMode::Uniform)
                    .unwrap()
            })
            .collect();
        let d1 = assemble_design(&z1, &x1, &bases1).unwrap();
        assert_eq!(d1.cols(), 27);
    }
}
