//! Robust scale and regression solvers: the M-scale equation, the
//! subsampling S-estimator, and the IRWLS M-step.
//!
//! ## Design notes
//!
//! * The M-scale is found by the fixed point `s^2 <- s^2 * sum rho0(r/s) /
//!   (b (n - dof))`, started at `median(|r|)/0.6745`. The left side of the
//!   defining equation is decreasing in `s`, so a bisection fallback with a
//!   guaranteed bracket covers the (rare) non-contractive cases.
//! * The S-estimator uses the subsampling strategy standard for this class
//!   of problems: elemental subsamples of size `1 + q + K` solved exactly,
//!   a couple of reweighting ("concentration") steps each, and full IRWLS
//!   refinement of the few candidates with the smallest scale.
//! * Candidate subsamples are drawn over a canonical row ordering (sorted by
//!   covariate rows, ties broken by response), which makes fits invariant
//!   under permutations of the input rows for a fixed seed.
//! * The M-step enforces a non-increasing objective through step halving;
//!   plain IRWLS does not guarantee monotonicity for redescending weights.
//!
//! ## Invariants
//!
//! * `m_scale` output satisfies the defining equation to 1e-8 or better.
//! * All solvers are deterministic given `SolverConfig::seed`.
//! * Scales are equivariant: `m_scale(lambda r) = |lambda| m_scale(r)`.

use crate::bsplines::DesignMatrix;
use crate::error::{PlamError, Result};
use crate::linalg::{solve_square_with_cond, solve_wls, WlsWorkspace};
use crate::rho::RhoFamily;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Specification of the M-scale equation.
#[derive(Debug, Clone)]
pub struct MScaleSpec {
    pub rho0: RhoFamily,
    /// Consistency constant `b = E rho0(eps)`; 1/2 for 50% breakdown.
    pub b: f64,
    /// Subtracted from `n` in the denominator: the parameter count `q + K`.
    pub dof_correction: usize,
}

impl MScaleSpec {
    pub fn new(rho0: RhoFamily, b: f64, dof_correction: usize) -> Self {
        assert!(b > 0.0 && b < 1.0, "consistency constant must be in (0,1)");
        Self {
            rho0,
            b,
            dof_correction,
        }
    }
}

const SCALE_REL_TOL: f64 = 1e-9;
const SCALE_MAX_ITER: usize = 200;

/// Solve `sum_i rho0(r_i / s) = b (n - dof)` for `s > 0`.
///
/// Returns 0 when so many residuals are exactly zero that the equation has
/// no positive root.
pub fn m_scale(residuals: &[f64], spec: &MScaleSpec) -> Result<f64> {
    let n = residuals.len();
    if n == 0 {
        return Err(PlamError::EmptyResiduals);
    }
    if spec.dof_correction >= n {
        return Err(PlamError::DofTooLarge {
            dof: spec.dof_correction,
            n,
        });
    }
    if !spec.rho0.is_bounded() {
        return Err(PlamError::UnboundedLoss);
    }
    let target = spec.b * (n - spec.dof_correction) as f64;
    let nonzero = residuals.iter().filter(|r| **r != 0.0).count() as f64;
    // sup_s sum rho0(r/s) = #nonzero, so the equation is unsolvable (and the
    // scale collapses to zero) unless strictly more than `target` residuals
    // are nonzero
    if nonzero <= target * (1.0 + 1e-12) {
        return Ok(0.0);
    }

    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let mut s = median / 0.6745;
    if s == 0.0 {
        s = abs.iter().sum::<f64>() / n as f64 / 0.6745;
    }

    let rho_sum = |s: f64| -> f64 { residuals.iter().map(|r| spec.rho0.rho(r / s)).sum() };

    let mut converged = false;
    for _ in 0..SCALE_MAX_ITER {
        let ratio = rho_sum(s) / target;
        let s_new = s * ratio.sqrt();
        if (s_new - s).abs() <= SCALE_REL_TOL * s {
            s = s_new;
            converged = true;
            break;
        }
        s = s_new;
    }
    if !converged {
        // bracket the root and bisect; rho_sum is non-increasing in s
        let mut lo = s;
        let mut hi = s.max(abs[n - 1]);
        while rho_sum(lo) < target && lo > 1e-300 {
            lo *= 0.5;
        }
        while rho_sum(hi) > target && hi < 1e300 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rho_sum(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= SCALE_REL_TOL * hi {
                break;
            }
        }
        s = 0.5 * (lo + hi);
    }
    Ok(s)
}

/// Tuning of the iterative solvers; surfaced through the CLI config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of elemental subsamples drawn by the S-estimator.
    pub n_sub: usize,
    /// Concentration steps applied to every subsample candidate.
    pub k_istep: usize,
    /// Candidates kept (by scale) for full refinement.
    pub best_keep: usize,
    /// Relative coefficient-change tolerance of the iterative steps.
    pub tol: f64,
    /// Iteration cap for refinement and the M-step.
    pub max_iter: usize,
    /// Seed for every random draw; fixes the output exactly.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_sub: 500,
            k_istep: 2,
            best_keep: 5,
            tol: 1e-7,
            max_iter: 200,
            seed: 0,
        }
    }
}

/// Result of the S-estimation step.
#[derive(Debug, Clone)]
pub struct SEstimate {
    /// `(a, b, c)` stacked as in the design layout, length `1 + q + K`.
    pub coefficients: DVector<f64>,
    /// Minimized residual M-scale.
    pub scale: f64,
    /// Running best scale over the processed candidates; non-increasing.
    pub scale_trace: Vec<f64>,
}

const SINGULAR_COND: f64 = 1e12;

/// Canonical row order: sort by the covariate part of each design row, ties
/// broken by the response. Content-based, so any permutation of the same
/// rows produces the same ordering.
fn canonical_order(design: &DMatrix<f64>, y: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..design.nrows()).collect();
    idx.sort_by(|&a, &b| {
        for c in 0..design.ncols() {
            match design[(a, c)].total_cmp(&design[(b, c)]) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        y[a].total_cmp(&y[b])
    });
    idx
}

fn residuals_into(design: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, out: &mut DVector<f64>) {
    out.copy_from(y);
    out.gemv(-1.0, design, beta, 1.0);
}

/// S-estimator of the regression coefficients and its residual scale.
///
/// Deterministic given `config.seed`. Errors when the design is rank
/// deficient or no non-singular elemental subsample can be drawn.
pub fn s_estimator(
    design: &DesignMatrix,
    y: &DVector<f64>,
    spec: &MScaleSpec,
    config: &SolverConfig,
) -> Result<SEstimate> {
    let n = design.n();
    let p = design.cols();
    if y.len() != n {
        return Err(PlamError::RowMismatch {
            left: y.len(),
            right: n,
        });
    }
    if n <= p {
        return Err(PlamError::InsufficientObservations { n, cols: p });
    }
    if !spec.rho0.is_bounded() {
        return Err(PlamError::UnboundedLoss);
    }
    if design.matrix.clone().col_piv_qr().rank(1e-10) < p {
        return Err(PlamError::RankDeficient);
    }

    // work on canonically ordered rows so that subsample draws (and every
    // accumulated sum) are independent of the input row order
    let order = canonical_order(&design.matrix, y);
    let mut a = DMatrix::zeros(n, p);
    let mut ys = DVector::zeros(n);
    for (new_i, &old_i) in order.iter().enumerate() {
        a.row_mut(new_i).copy_from(&design.matrix.row(old_i));
        ys[new_i] = y[old_i];
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ws = WlsWorkspace::new(p);
    let mut sub_a = DMatrix::zeros(p, p);
    let mut sub_y = DVector::zeros(p);
    let mut resid = DVector::zeros(n);
    let mut weights = vec![0.0f64; n];

    let attempt_budget = 50 * config.n_sub;
    let mut attempts = 0usize;
    let mut candidates: Vec<(f64, DVector<f64>)> = Vec::with_capacity(config.n_sub);
    let mut scale_trace = Vec::with_capacity(config.n_sub);
    let mut best_seen = f64::INFINITY;

    'outer: for _ in 0..config.n_sub {
        // draw until the elemental system is well conditioned
        let mut beta = loop {
            if attempts >= attempt_budget {
                if candidates.is_empty() {
                    return Err(PlamError::SubsamplingFailed { attempts });
                }
                break 'outer;
            }
            attempts += 1;
            let picks = rand::seq::index::sample(&mut rng, n, p);
            for (r, src) in picks.iter().enumerate() {
                sub_a.row_mut(r).copy_from(&a.row(src));
                sub_y[r] = ys[src];
            }
            match solve_square_with_cond(&sub_a, &sub_y) {
                Some((beta, cond)) if cond <= SINGULAR_COND => break beta,
                _ => continue,
            }
        };

        let mut scale = {
            residuals_into(&a, &ys, &beta, &mut resid);
            m_scale(resid.as_slice(), spec)?
        };
        if scale > 0.0 {
            for _ in 0..config.k_istep {
                for i in 0..n {
                    weights[i] = spec.rho0.weight(resid[i] / scale);
                }
                let Some(next) = solve_wls(&a, &ys, &weights, &mut ws) else {
                    break;
                };
                beta = next;
                residuals_into(&a, &ys, &beta, &mut resid);
                scale = m_scale(resid.as_slice(), spec)?;
                if scale == 0.0 {
                    break;
                }
            }
        }

        best_seen = best_seen.min(scale);
        scale_trace.push(best_seen);
        candidates.push((scale, beta));
        if scale == 0.0 {
            // exact interpolation of the bulk: nothing can do better
            break;
        }
    }

    candidates.sort_by(|l, r| l.0.total_cmp(&r.0));
    candidates.truncate(config.best_keep.max(1));

    let mut best: Option<(f64, DVector<f64>)> = None;
    for (scale0, beta0) in candidates {
        let mut beta = beta0;
        let mut scale = scale0;
        if scale > 0.0 {
            for _ in 0..config.max_iter {
                residuals_into(&a, &ys, &beta, &mut resid);
                for i in 0..n {
                    weights[i] = spec.rho0.weight(resid[i] / scale);
                }
                let Some(next) = solve_wls(&a, &ys, &weights, &mut ws) else {
                    break;
                };
                let delta = (&next - &beta).amax();
                let norm = 1.0 + beta.amax();
                beta = next;
                residuals_into(&a, &ys, &beta, &mut resid);
                scale = m_scale(resid.as_slice(), spec)?;
                if scale == 0.0 || delta <= config.tol * norm {
                    break;
                }
            }
        }
        match &best {
            Some((s, _)) if *s <= scale => {}
            _ => best = Some((scale, beta)),
        }
    }

    let (scale, coefficients) = best.expect("at least one candidate");
    Ok(SEstimate {
        coefficients,
        scale,
        scale_trace,
    })
}

/// Result of the IRWLS M-step.
#[derive(Debug, Clone)]
pub struct MStepResult {
    pub coefficients: DVector<f64>,
    /// Final objective `sum_i rho1(r_i / sigma)`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_HALVINGS: usize = 30;

/// IRWLS minimization of `sum_i rho1(r_i / sigma)` from `init`, with step
/// halving so the objective never increases.
pub fn m_step(
    design: &DesignMatrix,
    y: &DVector<f64>,
    sigma: f64,
    rho1: &RhoFamily,
    init: &DVector<f64>,
    config: &SolverConfig,
) -> Result<MStepResult> {
    let n = design.n();
    let p = design.cols();
    if sigma <= 0.0 {
        return Err(PlamError::NonPositiveScale(sigma));
    }
    if !rho1.is_bounded() {
        return Err(PlamError::UnboundedLoss);
    }
    if init.len() != p {
        return Err(PlamError::DimensionMismatch {
            expected: p,
            got: init.len(),
        });
    }

    let a = &design.matrix;
    let mut ws = WlsWorkspace::new(p);
    let mut resid = DVector::zeros(n);
    let mut weights = vec![0.0f64; n];

    let objective = |r: &DVector<f64>| -> f64 { r.iter().map(|v| rho1.rho(v / sigma)).sum() };

    let mut beta = init.clone();
    residuals_into(a, y, &beta, &mut resid);
    let mut obj = objective(&resid);
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..config.max_iter {
        iterations += 1;
        let mut wsum = 0.0;
        for i in 0..n {
            weights[i] = rho1.weight(resid[i] / sigma);
            wsum += weights[i];
        }
        if wsum == 0.0 {
            return Err(PlamError::AllObservationsRejected);
        }
        let Some(proposal) = solve_wls(a, y, &weights, &mut ws) else {
            return Err(PlamError::AllObservationsRejected);
        };

        // halve the step until the objective does not increase
        let direction = &proposal - &beta;
        let mut step = 1.0;
        let mut accepted = None;
        let mut trial_resid = DVector::zeros(n);
        for _ in 0..=MAX_HALVINGS {
            let trial = &beta + &direction * step;
            residuals_into(a, y, &trial, &mut trial_resid);
            let trial_obj = objective(&trial_resid);
            if trial_obj <= obj {
                accepted = Some((trial, trial_obj));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_obj)) = accepted else {
            converged = true;
            break;
        };

        let delta = (&next - &beta).amax();
        let norm = 1.0 + beta.amax();
        beta = next;
        obj = next_obj;
        residuals_into(a, y, &beta, &mut resid);
        if delta <= config.tol * norm {
            converged = true;
            break;
        }
    }

    Ok(MStepResult {
        coefficients: beta,
        objective: obj,
        iterations,
        converged,
    })
}
