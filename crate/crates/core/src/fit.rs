//! End-to-end model fitting: basis-dimension selection, S + M estimation or
//! least squares, additive-curve reconstruction, prediction and residual
//! diagnostics.

use crate::bsplines::{assemble_design, design_row, CenteredSplineBasis, KnotMode};
use crate::error::{PlamError, Result};
use crate::linalg::solve_ls;
use crate::rho::{RhoFamily, TUKEY_C_95, TUKEY_C_HALF};
use crate::solvers::{m_scale, m_step, s_estimator, MScaleSpec, SolverConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// S-scale initialization followed by a bounded-loss M-step.
    Mm,
    /// Classical least squares.
    Ls,
}

/// Which constant each additive component is normalized against.
///
/// `Integral` makes every fitted component integrate to zero over the
/// observed range of its covariate, which matches the identifiability
/// constraint of the model. `Empirical` recenters each component to have
/// zero mean over the training observations instead, the convention most
/// regression software uses when reporting the intercept; predictions are
/// identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    Integral,
    Empirical,
}

/// Fit specification.
#[derive(Debug, Clone)]
pub struct PlamSpec {
    pub method: Method,
    /// Spline order per covariate; `None` means cubic (order 4) everywhere.
    pub orders: Option<Vec<usize>>,
    /// Candidate basis dimensions; `None` uses the sample-size rule
    /// `max(ceil(n^{1/5}/2), 4) ..= floor(8 + 2 n^{1/5})`.
    pub k_grid: Option<Vec<usize>>,
    /// Use the same dimension for every component (the default). When
    /// false the full cartesian product of the grid over components is
    /// searched, which grows very quickly with `p`.
    pub equal_k: bool,
    pub knot_mode: KnotMode,
    pub centering: Centering,
    pub rho0: RhoFamily,
    /// Consistency constant of the M-scale.
    pub b: f64,
    pub rho1: RhoFamily,
    pub solver: SolverConfig,
}

impl PlamSpec {
    pub fn mm() -> Self {
        Self {
            method: Method::Mm,
            orders: None,
            k_grid: None,
            equal_k: true,
            knot_mode: KnotMode::Uniform,
            centering: Centering::Integral,
            rho0: RhoFamily::tukey(TUKEY_C_HALF),
            b: 0.5,
            rho1: RhoFamily::tukey(TUKEY_C_95),
            solver: SolverConfig::default(),
        }
    }

    pub fn ls() -> Self {
        Self {
            method: Method::Ls,
            ..Self::mm()
        }
    }
}

/// Default candidate dimensions for a sample of size `n`.
pub fn default_k_grid(n: usize) -> Vec<usize> {
    let root = (n as f64).powf(0.2);
    let lo = ((root / 2.0).ceil() as usize).max(4);
    let hi = (8.0 + 2.0 * root).floor() as usize;
    (lo..=hi.max(lo)).collect()
}

/// A fitted partially linear additive model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlamFit {
    pub method: Method,
    pub centering: Centering,
    pub mu_hat: f64,
    pub beta_hat: DVector<f64>,
    /// Reduced spline coefficients per smooth covariate, length `k_j - 1`.
    pub c_hat: Vec<DVector<f64>>,
    /// Constant subtracted from each raw component; zero under
    /// `Centering::Integral`.
    pub eta_offsets: Vec<f64>,
    /// Residual S-scale for MM fits; residual standard deviation
    /// (dof-corrected) for LS fits.
    pub sigma_hat: f64,
    pub bases: Vec<CenteredSplineBasis>,
    pub residuals: DVector<f64>,
    pub selected_k: Vec<usize>,
    /// Every candidate evaluated, with its criterion value.
    pub criterion_trace: Vec<(Vec<usize>, f64)>,
    pub rho1: RhoFamily,
}

impl PlamFit {
    pub fn q(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn p(&self) -> usize {
        self.bases.len()
    }

    /// Fitted additive component `eta_j` at `x` (clamped to the basis range).
    pub fn eta(&self, j: usize, x: f64) -> f64 {
        self.bases[j].component_value(self.c_hat[j].as_slice(), x) - self.eta_offsets[j]
    }

    /// Predicted regression function for one observation.
    pub fn predict_one(&self, z_row: &[f64], x_row: &[f64]) -> f64 {
        assert_eq!(z_row.len(), self.q());
        assert_eq!(x_row.len(), self.p());
        let mut v = self.mu_hat;
        for (b, z) in self.beta_hat.iter().zip(z_row) {
            v += b * z;
        }
        for j in 0..self.p() {
            v += self.eta(j, x_row[j]);
        }
        v
    }

    /// Rowwise prediction; `z_new` and `x_new` must match the fitted shapes.
    pub fn predict(&self, z_new: &DMatrix<f64>, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        if z_new.ncols() != self.q() {
            return Err(PlamError::DimensionMismatch {
                expected: self.q(),
                got: z_new.ncols(),
            });
        }
        if x_new.ncols() != self.p() {
            return Err(PlamError::DimensionMismatch {
                expected: self.p(),
                got: x_new.ncols(),
            });
        }
        let n = z_new.nrows().max(x_new.nrows());
        if z_new.nrows() != n && self.q() > 0 {
            return Err(PlamError::RowMismatch {
                left: z_new.nrows(),
                right: n,
            });
        }
        let mut out = DVector::zeros(n);
        let mut zbuf = vec![0.0; self.q()];
        let mut xbuf = vec![0.0; self.p()];
        for i in 0..n {
            for c in 0..self.q() {
                zbuf[c] = z_new[(i, c)];
            }
            for c in 0..self.p() {
                xbuf[c] = x_new[(i, c)];
            }
            out[i] = self.predict_one(&zbuf, &xbuf);
        }
        Ok(out)
    }
}

struct CandidateFit {
    k_vec: Vec<usize>,
    criterion: f64,
    coefficients: DVector<f64>,
    sigma: f64,
    bases: Vec<CenteredSplineBasis>,
}

/// Robust BIC: `log(sigma^2 sum rho1(r/sigma)) + (log n / 2n) sum_j k_j`.
///
/// For the squared loss the scale cancels and the criterion reduces to
/// `log(sum r^2) + (log n / 2n) sum_j k_j`; `sigma_hat` is ignored then.
pub fn rbic(
    residuals: &DVector<f64>,
    sigma_hat: f64,
    rho1: &RhoFamily,
    k_vec: &[usize],
    n: usize,
) -> Result<f64> {
    let penalty = (n as f64).ln() / (2.0 * n as f64) * k_vec.iter().sum::<usize>() as f64;
    let fit_term = if rho1.is_bounded() {
        if sigma_hat <= 0.0 {
            return Err(PlamError::NonPositiveScale(sigma_hat));
        }
        let loss: f64 = residuals.iter().map(|r| rho1.rho(r / sigma_hat)).sum();
        if loss <= 0.0 {
            return Err(PlamError::DegenerateCriterion);
        }
        (sigma_hat * sigma_hat * loss).ln()
    } else {
        let ss: f64 = residuals.iter().map(|r| r * r).sum();
        if ss <= 0.0 {
            return Err(PlamError::DegenerateCriterion);
        }
        ss.ln()
    };
    Ok(fit_term + penalty)
}

fn candidate_grids(p: usize, grid: &[usize], equal_k: bool) -> Vec<Vec<usize>> {
    if p == 0 {
        return vec![vec![]];
    }
    if equal_k {
        return grid.iter().map(|&k| vec![k; p]).collect();
    }
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..p {
        let mut next = Vec::with_capacity(out.len() * grid.len());
        for prefix in &out {
            for &k in grid {
                let mut v = prefix.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Canonical row order for the whole fitting problem: sort by the covariate
/// rows `(Z, X)`, ties broken by `y`. Makes fits independent of the input
/// row order.
fn canonical_rows(z: &DMatrix<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<usize> {
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        for c in 0..z.ncols() {
            match z[(a, c)].total_cmp(&z[(b, c)]) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        for c in 0..x.ncols() {
            match x[(a, c)].total_cmp(&x[(b, c)]) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        y[a].total_cmp(&y[b])
    });
    idx
}

/// Fit a partially linear additive model.
///
/// For every candidate basis dimension the design is rebuilt and fitted by
/// the requested method; the fit minimizing the selection criterion is
/// returned, with ties broken toward smaller dimensions.
pub fn fit(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &PlamSpec,
) -> Result<PlamFit> {
    let n = y.len();
    let q = z.ncols();
    let p = x.ncols();
    if z.nrows() != n && q > 0 {
        return Err(PlamError::RowMismatch {
            left: z.nrows(),
            right: n,
        });
    }
    if x.nrows() != n && p > 0 {
        return Err(PlamError::RowMismatch {
            left: x.nrows(),
            right: n,
        });
    }
    let orders: Vec<usize> = match &spec.orders {
        Some(o) => {
            assert_eq!(o.len(), p, "one spline order per smooth covariate");
            o.clone()
        }
        None => vec![4; p],
    };
    let grid = match &spec.k_grid {
        Some(g) => g.clone(),
        None => default_k_grid(n),
    };
    if grid.is_empty() {
        return Err(PlamError::EmptyKGrid);
    }
    let max_cols = 1 + q + p * (grid.iter().max().unwrap() - 1);
    if n <= max_cols {
        return Err(PlamError::InsufficientObservations { n, cols: max_cols });
    }

    // canonical ordering of the rows; all sums below run in this order
    let order = canonical_rows(z, x, y);
    let zs = DMatrix::from_fn(n, q, |i, c| z[(order[i], c)]);
    let xs = DMatrix::from_fn(n, p, |i, c| x[(order[i], c)]);
    let ys = DVector::from_fn(n, |i, _| y[order[i]]);

    let mut trace: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut best: Option<CandidateFit> = None;

    for k_vec in candidate_grids(p, &grid, spec.equal_k) {
        let mut bases = Vec::with_capacity(p);
        for j in 0..p {
            bases.push(CenteredSplineBasis::build(
                xs.column(j).as_slice(),
                orders[j],
                k_vec[j],
                spec.knot_mode,
            )?);
        }
        let design = assemble_design(&zs, &xs, &bases)?;

        let (coefficients, sigma, criterion) = match spec.method {
            Method::Ls => {
                let beta = solve_ls(&design.matrix, &ys).ok_or(PlamError::RankDeficient)?;
                let resid = &ys - &design.matrix * &beta;
                let dof = n.saturating_sub(design.cols()).max(1);
                let sigma = (resid.norm_squared() / dof as f64).sqrt();
                let crit = rbic(&resid, sigma, &RhoFamily::square(), &k_vec, n)?;
                (beta, sigma, crit)
            }
            Method::Mm => {
                let mspec = MScaleSpec::new(spec.rho0, spec.b, design.dof_correction());
                let s_est = s_estimator(&design, &ys, &mspec, &spec.solver)?;
                if s_est.scale == 0.0 {
                    // exact fit; no M-step possible and the criterion is
                    // conventionally minus infinity
                    (s_est.coefficients, 0.0, f64::NEG_INFINITY)
                } else {
                    let m = m_step(
                        &design,
                        &ys,
                        s_est.scale,
                        &spec.rho1,
                        &s_est.coefficients,
                        &spec.solver,
                    )?;
                    let resid = &ys - &design.matrix * &m.coefficients;
                    let crit = rbic(&resid, s_est.scale, &spec.rho1, &k_vec, n)?;
                    (m.coefficients, s_est.scale, crit)
                }
            }
        };

        trace.push((k_vec.clone(), criterion));
        let better = match &best {
            None => true,
            Some(b) => criterion < b.criterion,
        };
        if better {
            best = Some(CandidateFit {
                k_vec,
                criterion,
                coefficients,
                sigma,
                bases,
            });
        }
    }

    let chosen = best.expect("grid is non-empty");

    // split the stacked coefficient vector
    let mut mu = chosen.coefficients[0];
    let beta_hat = DVector::from_fn(q, |c, _| chosen.coefficients[1 + c]);
    let mut c_hat = Vec::with_capacity(p);
    let mut offset = 1 + q;
    for basis in &chosen.bases {
        let w = basis.reduced_len();
        c_hat.push(DVector::from_fn(w, |c, _| chosen.coefficients[offset + c]));
        offset += w;
    }

    let eta_offsets = match spec.centering {
        Centering::Integral => vec![0.0; p],
        Centering::Empirical => {
            let offs: Vec<f64> = (0..p)
                .map(|j| {
                    let basis = &chosen.bases[j];
                    let coef = c_hat[j].as_slice();
                    (0..n)
                        .map(|i| basis.component_value(coef, xs[(i, j)]))
                        .sum::<f64>()
                        / n as f64
                })
                .collect();
            mu += offs.iter().sum::<f64>();
            offs
        }
    };

    let mut fitted = PlamFit {
        method: spec.method,
        centering: spec.centering,
        mu_hat: mu,
        beta_hat,
        c_hat,
        eta_offsets,
        sigma_hat: chosen.sigma,
        bases: chosen.bases,
        residuals: DVector::zeros(n),
        selected_k: chosen.k_vec,
        criterion_trace: trace,
        rho1: spec.rho1,
    };
    // residuals in the original row order, through the same evaluation path
    // as prediction so the identity r = y - m(z, x) is exact
    let predictions = fitted.predict(z, x)?;
    fitted.residuals = y - predictions;
    Ok(fitted)
}

/// Indices (0-based) of observations whose residual falls outside the
/// boxplot whiskers `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]` of the robust residuals.
pub fn flag_outliers(fit: &PlamFit) -> Result<Vec<usize>> {
    if fit.method != Method::Mm {
        return Err(PlamError::RequiresMmFit);
    }
    let mut sorted: Vec<f64> = fit.residuals.iter().cloned().collect();
    sorted.sort_by(f64::total_cmp);
    let q1 = crate::bsplines::quantile(&sorted, 0.25);
    let q3 = crate::bsplines::quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Ok(fit
        .residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r < lo || **r > hi)
        .map(|(i, _)| i)
        .collect())
}
