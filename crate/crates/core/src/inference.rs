//! Asymptotic covariance of the linear coefficients.
//!
//! The covariance of `beta_hat` factors into an efficiency term driven by
//! the loss function and a scatter term driven by how well the linear
//! covariates can be predicted from the smooth ones. The latter needs the
//! conditional mean `E(Z | X)`, estimated here component by component with
//! the same robust additive spline machinery used for the outcome model.

use crate::bsplines::{assemble_design, CenteredSplineBasis};
use crate::error::{PlamError, Result};
use crate::fit::{Method, PlamFit};
use crate::linalg::{solve_ls, sym_inverse};
use crate::rho::RhoFamily;
use crate::solvers::{m_step, s_estimator, MScaleSpec, SolverConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Robust additive fits of every linear covariate on the smooth covariates,
/// estimating the conditional mean `E(Z | X)`.
#[derive(Debug, Clone)]
pub struct ZMeanFit {
    /// Intercept per linear covariate.
    pub intercepts: Vec<f64>,
    /// Reduced spline coefficients per linear covariate and smooth covariate.
    pub coef_blocks: Vec<Vec<DVector<f64>>>,
    /// Residual S-scale per linear covariate (0 when fitted exactly).
    pub scales: Vec<f64>,
    pub bases: Vec<CenteredSplineBasis>,
    pub method: Method,
}

impl ZMeanFit {
    pub fn q(&self) -> usize {
        self.intercepts.len()
    }

    /// Fitted conditional mean of covariate `m` at `x_row`.
    pub fn value(&self, m: usize, x_row: &[f64]) -> f64 {
        let mut v = self.intercepts[m];
        for (j, basis) in self.bases.iter().enumerate() {
            v += basis.component_value(self.coef_blocks[m][j].as_slice(), x_row[j]);
        }
        v
    }

    /// Matrix of fitted values, one row per observation.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let mut out = DMatrix::zeros(n, self.q());
        let mut xbuf = vec![0.0; x.ncols()];
        for i in 0..n {
            for c in 0..x.ncols() {
                xbuf[c] = x[(i, c)];
            }
            for m in 0..self.q() {
                out[(i, m)] = self.value(m, &xbuf);
            }
        }
        out
    }
}

/// Fit the conditional mean of each linear covariate given the smooth ones,
/// reusing the bases of the outcome fit.
///
/// `Method::Mm` runs an S-scale plus bounded M-step per component;
/// `Method::Ls` is the classical least-squares variant.
pub fn fit_z_mean(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    bases: &[CenteredSplineBasis],
    method: Method,
    rho0: &RhoFamily,
    b: f64,
    rho1: &RhoFamily,
    solver: &SolverConfig,
) -> Result<ZMeanFit> {
    let n = x.nrows();
    if z.nrows() != n {
        return Err(PlamError::RowMismatch {
            left: z.nrows(),
            right: n,
        });
    }
    let q = z.ncols();
    let p = bases.len();
    let design = assemble_design(&DMatrix::zeros(n, 0), x, bases)?;

    let mut intercepts = Vec::with_capacity(q);
    let mut coef_blocks = Vec::with_capacity(q);
    let mut scales = Vec::with_capacity(q);

    for m in 0..q {
        let zm = DVector::from_fn(n, |i, _| z[(i, m)]);
        let (scale, coefficients) = match method {
            Method::Ls => {
                let beta = solve_ls(&design.matrix, &zm).ok_or(PlamError::RankDeficient)?;
                let resid = &zm - &design.matrix * &beta;
                let dof = n.saturating_sub(design.cols()).max(1);
                ((resid.norm_squared() / dof as f64).sqrt(), beta)
            }
            Method::Mm => {
                // the denominator correction here is the spline column count
                let mspec = MScaleSpec::new(*rho0, b, design.dof_correction());
                let s_est = s_estimator(&design, &zm, &mspec, solver)?;
                if s_est.scale == 0.0 {
                    (0.0, s_est.coefficients)
                } else {
                    let step =
                        m_step(&design, &zm, s_est.scale, rho1, &s_est.coefficients, solver)?;
                    (s_est.scale, step.coefficients)
                }
            }
        };
        intercepts.push(coefficients[0]);
        let mut blocks = Vec::with_capacity(p);
        let mut offset = 1;
        for basis in bases {
            let w = basis.reduced_len();
            blocks.push(DVector::from_fn(w, |c, _| coefficients[offset + c]));
            offset += w;
        }
        coef_blocks.push(blocks);
        scales.push(scale);
    }

    Ok(ZMeanFit {
        intercepts,
        coef_blocks,
        scales,
        bases: bases.to_vec(),
        method,
    })
}

/// Standardized residuals `(y_i - m(z_i, x_i)) / sigma_hat` of an MM fit.
pub fn standardized_residuals(fit: &PlamFit) -> Result<DVector<f64>> {
    if fit.sigma_hat <= 0.0 {
        return Err(PlamError::NonPositiveScale(fit.sigma_hat));
    }
    Ok(&fit.residuals / fit.sigma_hat)
}

/// Efficiency factor `[n^-1 sum psi^2(e_i)] / [n^-1 sum psi'(e_i)]^2`.
pub fn efficiency_factor(eps: &DVector<f64>, rho1: &RhoFamily) -> Result<f64> {
    let n = eps.len() as f64;
    let num: f64 = eps.iter().map(|e| rho1.psi(*e).powi(2)).sum::<f64>() / n;
    let den: f64 = eps.iter().map(|e| rho1.psi_prime(*e)).sum::<f64>() / n;
    if den == 0.0 {
        return Err(PlamError::AllObservationsRejected);
    }
    Ok(num / (den * den))
}

/// Scatter of the covariate residuals `Z_i - h(X_i)`, optionally weighted.
///
/// Unweighted: `n^-1 sum d_i d_i^T`. Weighted: `(sum w_i)^-1 sum w_i d_i
/// d_i^T`; weights must be non-negative and not all zero.
pub fn covariate_scatter(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    zmean: &ZMeanFit,
    weights: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    let q = z.ncols();
    let fitted = zmean.predict(x);
    let mut acc = DMatrix::zeros(q, q);
    let mut wsum = 0.0;
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        wsum += w;
        for r in 0..q {
            let dr = z[(i, r)] - fitted[(i, r)];
            for c in r..q {
                let dc = z[(i, c)] - fitted[(i, c)];
                acc[(r, c)] += w * dr * dc;
            }
        }
    }
    if wsum == 0.0 {
        return Err(PlamError::ZeroWeights);
    }
    let denom = if weights.is_some() { wsum } else { n as f64 };
    for r in 0..q {
        for c in r..q {
            acc[(r, c)] /= denom;
            acc[(c, r)] = acc[(r, c)];
        }
    }
    Ok(acc)
}

/// Flavor of the covariance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMethod {
    /// `sigma^2 * upsilon * A^-1` with the unweighted scatter.
    PluginPlain,
    /// Same, with the scatter downweighted by `w(e_i)`; the default, since
    /// it controls bad leverage points.
    PluginWeighted,
    /// `B^-1 D B^-T` with loss-derivative weighted scatters.
    Sandwich,
}

/// Estimated asymptotic covariance of `beta_hat` and derived standard errors.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub method: CovMethod,
    pub upsilon_hat: f64,
    pub a_hat: DMatrix<f64>,
    pub b_hat: Option<DMatrix<f64>>,
    pub d_hat: Option<DMatrix<f64>>,
    pub sigma_matrix: DMatrix<f64>,
    /// `sqrt(diag(Sigma) / n)`.
    pub std_errors: DVector<f64>,
    /// Condition estimate of the inverted matrix; above 1e10 is suspect.
    pub condition: f64,
}

/// Estimate the asymptotic covariance of the linear coefficients of an MM
/// fit, given a conditional-mean fit for the linear covariates.
pub fn beta_covariance(
    fit: &PlamFit,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    zmean: &ZMeanFit,
    method: CovMethod,
) -> Result<CovarianceEstimate> {
    let n = z.nrows();
    let q = z.ncols();
    let eps = standardized_residuals(fit)?;
    let rho1 = &fit.rho1;
    let upsilon = efficiency_factor(&eps, rho1)?;
    let sigma2 = fit.sigma_hat * fit.sigma_hat;

    let plain = covariate_scatter(z, x, zmean, None)?;

    let (a_hat, b_hat, d_hat, sigma_matrix, condition) = match method {
        CovMethod::PluginPlain | CovMethod::PluginWeighted => {
            let a = if method == CovMethod::PluginPlain {
                plain
            } else {
                let w: Vec<f64> = eps.iter().map(|e| rho1.weight(*e)).collect();
                covariate_scatter(z, x, zmean, Some(&w))?
            };
            let (inv, cond) = sym_inverse(&a, "A")?;
            let sigma = inv * (sigma2 * upsilon);
            (a, None, None, sigma, cond)
        }
        CovMethod::Sandwich => {
            let fitted = zmean.predict(x);
            let mut b = DMatrix::zeros(q, q);
            let mut d = DMatrix::zeros(q, q);
            for i in 0..n {
                let pp = rho1.psi_prime(eps[i]);
                let ps = rho1.psi(eps[i]);
                for r in 0..q {
                    let dr = z[(i, r)] - fitted[(i, r)];
                    for c in r..q {
                        let dc = z[(i, c)] - fitted[(i, c)];
                        b[(r, c)] += pp * dr * dc;
                        d[(r, c)] += ps * ps * dr * dc;
                    }
                }
            }
            let scale = 1.0 / (n as f64 * sigma2);
            for r in 0..q {
                for c in r..q {
                    b[(r, c)] *= -scale;
                    d[(r, c)] *= scale;
                    b[(c, r)] = b[(r, c)];
                    d[(c, r)] = d[(r, c)];
                }
            }
            let (b_inv, cond) = sym_inverse(&b, "B")?;
            let sigma = &b_inv * &d * b_inv.transpose();
            let sigma = (&sigma + sigma.transpose()) * 0.5;
            (plain, Some(b), Some(d), sigma, cond)
        }
    };

    let std_errors = DVector::from_fn(q, |c, _| (sigma_matrix[(c, c)] / n as f64).sqrt());
    Ok(CovarianceEstimate {
        method,
        upsilon_hat: upsilon,
        a_hat,
        b_hat,
        d_hat,
        sigma_matrix,
        std_errors,
        condition,
    })
}
