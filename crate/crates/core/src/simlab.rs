//! Simulation benchmark: data generators, contamination schemes, error
//! metrics and the replicated experiment runner.

use crate::bsplines::KnotMode;
use crate::error::{PlamError, Result};
use crate::fit::{fit, Method, PlamSpec};
use crate::solvers::SolverConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::{E, PI};

pub const TRUE_MU: f64 = 0.0;
pub const TRUE_BETA: [f64; 2] = [3.0, 3.0];
pub const TRUE_SIGMA: f64 = 0.2;

/// First additive component; integrates to zero on [0, 1].
pub fn eta1_true(x: f64) -> f64 {
    2.0 * (PI * x).sin() - 4.0 / PI
}

/// Second additive component; integrates to zero on [0, 1].
pub fn eta2_true(x: f64) -> f64 {
    x.exp() - (E - 1.0)
}

/// Contamination schemes applied on top of a clean sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contamination {
    /// Clean data, the identity.
    C0,
    /// Heavy-tailed errors: `0.9 N(0,1) + 0.1 N(0,100)`.
    C1,
    /// Asymmetric gross errors: `0.85 N(0, sigma^2) + 0.15 N(15, 0.1^2)`
    /// on the composite error `u = sigma eps`.
    C2,
    /// High-leverage points: one observation per occupied cell of the 3x3
    /// partition of the covariate square gets `(Z1, Z2) = (20, 20)`.
    C3,
}

impl Contamination {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C0" => Some(Self::C0),
            "C1" => Some(Self::C1),
            "C2" => Some(Self::C2),
            "C3" => Some(Self::C3),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::C0 => "C0",
            Self::C1 => "C1",
            Self::C2 => "C2",
            Self::C3 => "C3",
        }
    }
}

/// One generated dataset, keeping the noiseless signal around so the
/// contamination schemes can redraw the error part.
#[derive(Debug, Clone)]
pub struct SimulatedSample {
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    /// `mu + beta'Z + eta1(X1) + eta2(X2)` per observation.
    pub signal: DVector<f64>,
}

/// Latent Gaussian correlation that induces a 0.7 correlation between the
/// two uniform marginals of the copula pair: `2 sin(pi 0.7 / 6)`.
fn copula_latent_correlation() -> f64 {
    2.0 * (PI * 0.7 / 6.0).sin()
}

/// Draw a clean sample from one of the six benchmark designs.
pub fn generate(model: u8, n: usize, rng: &mut ChaCha8Rng) -> Result<SimulatedSample> {
    if !(1..=6).contains(&model) {
        return Err(PlamError::BadModelId(model));
    }
    let gauss = Normal::new(0.0, 1.0).unwrap();
    let mut x = DMatrix::zeros(n, 2);
    let mut z = DMatrix::zeros(n, 2);

    match model {
        1 => {
            for i in 0..n {
                z[(i, 0)] = rng.gen();
                z[(i, 1)] = rng.gen();
                x[(i, 0)] = rng.gen();
                x[(i, 1)] = rng.gen();
            }
        }
        2 => {
            // (X1, Z1) from a Gaussian copula with uniform marginals and
            // correlation 0.7; the rest independent
            let r = copula_latent_correlation();
            for i in 0..n {
                let g1: f64 = StandardNormal.sample(rng);
                let g2: f64 = StandardNormal.sample(rng);
                let g2 = r * g1 + (1.0 - r * r).sqrt() * g2;
                x[(i, 0)] = gauss.cdf(g1);
                z[(i, 0)] = gauss.cdf(g2);
                x[(i, 1)] = rng.gen();
                z[(i, 1)] = rng.gen();
            }
        }
        3 => {
            for i in 0..n {
                x[(i, 0)] = rng.gen();
                x[(i, 1)] = rng.gen();
                let u1: f64 = StandardNormal.sample(rng);
                let u2: f64 = StandardNormal.sample(rng);
                z[(i, 0)] = x[(i, 0)] + x[(i, 1)] * x[(i, 1)] + 0.1 * u1;
                z[(i, 1)] = (x[(i, 0)].exp() - 1.0) / 2.0 + 0.1 * u2;
            }
        }
        4 => {
            let b1 = Binomial::new(3, 0.5).unwrap();
            let b2 = Binomial::new(5, 0.2).unwrap();
            for i in 0..n {
                x[(i, 0)] = rng.gen();
                x[(i, 1)] = rng.gen();
                z[(i, 0)] = b1.sample(rng) as f64 / 3.0;
                z[(i, 1)] = b2.sample(rng) as f64 / 5.0;
            }
        }
        5 => {
            // (W1, W2, W3) multinomial(10; 1/4, 1/2, 1/4) via chained binomials
            let b1 = Binomial::new(10, 0.25).unwrap();
            for i in 0..n {
                x[(i, 0)] = rng.gen();
                x[(i, 1)] = rng.gen();
                let w1 = b1.sample(rng);
                let w2 = Binomial::new(10 - w1, 0.5 / 0.75).unwrap().sample(rng);
                z[(i, 0)] = w1 as f64 / 10.0;
                z[(i, 1)] = w2 as f64 / 10.0;
            }
        }
        6 => {
            let b1 = Binomial::new(5, 0.25).unwrap();
            for i in 0..n {
                x[(i, 0)] = rng.gen();
                x[(i, 1)] = rng.gen();
                z[(i, 0)] = b1.sample(rng) as f64 / 5.0;
                let w = if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
                let ind = if x[(i, 0)] < 2.0 / 3.0 { 1.0 } else { 0.0 };
                z[(i, 1)] = 0.5 * (ind + w);
            }
        }
        _ => unreachable!(),
    }

    let signal = DVector::from_fn(n, |i, _| {
        TRUE_MU
            + TRUE_BETA[0] * z[(i, 0)]
            + TRUE_BETA[1] * z[(i, 1)]
            + eta1_true(x[(i, 0)])
            + eta2_true(x[(i, 1)])
    });
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(rng);
        signal[i] + TRUE_SIGMA * e
    });

    Ok(SimulatedSample { y, z, x, signal })
}

/// Apply a contamination scheme in place. `C0` leaves the sample untouched.
pub fn contaminate(sample: &mut SimulatedSample, scheme: Contamination, rng: &mut ChaCha8Rng) {
    let n = sample.y.len();
    match scheme {
        Contamination::C0 => {}
        Contamination::C1 => {
            for i in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                let e = if rng.gen::<f64>() < 0.1 { 10.0 * e } else { e };
                sample.y[i] = sample.signal[i] + TRUE_SIGMA * e;
            }
        }
        Contamination::C2 => {
            for i in 0..n {
                let g: f64 = StandardNormal.sample(rng);
                let u = if rng.gen::<f64>() < 0.15 {
                    15.0 + 0.1 * g
                } else {
                    TRUE_SIGMA * g
                };
                sample.y[i] = sample.signal[i] + u;
            }
        }
        Contamination::C3 => {
            // lowest-index observation in each occupied cell of the 3x3 grid
            let mut chosen = [usize::MAX; 9];
            for i in 0..n {
                let cx = ((sample.x[(i, 0)] * 3.0).floor() as usize).min(2);
                let cy = ((sample.x[(i, 1)] * 3.0).floor() as usize).min(2);
                let cell = 3 * cx + cy;
                if chosen[cell] == usize::MAX {
                    chosen[cell] = i;
                }
            }
            for &i in chosen.iter().filter(|&&i| i != usize::MAX) {
                sample.z[(i, 0)] = 20.0;
                sample.z[(i, 1)] = 20.0;
            }
        }
    }
}

/// Mean squared gap over an `m`-point grid, plus the version trimmed to the
/// central grid points (dropping `trim` points at each end).
pub fn ise(estimate: &[f64], truth: &[f64], trim: usize) -> (f64, f64) {
    assert_eq!(estimate.len(), truth.len());
    let m = estimate.len();
    let full = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / m as f64;
    let inner = &estimate[trim..m - trim];
    let inner_t = &truth[trim..m - trim];
    let trimmed = inner
        .iter()
        .zip(inner_t)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (m - 2 * trim) as f64;
    (full, trimmed)
}

/// Experiment specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub model: u8,
    pub contamination: Contamination,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub grid_size: usize,
}

impl SimulationSpec {
    pub fn new(model: u8, contamination: Contamination, n: usize, replications: usize, seed: u64) -> Self {
        Self {
            model,
            contamination,
            n,
            replications,
            seed,
            grid_size: 1000,
        }
    }

    pub fn trim_points(&self) -> usize {
        (self.grid_size as f64 * 0.05).floor() as usize
    }
}

/// Per-method outcome of one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRecord {
    pub selected_k: usize,
    pub mu_hat: f64,
    pub beta_hat: [f64; 2],
    /// `(full, trimmed)` grid ISE per additive component.
    pub ise_eta: [(f64, f64); 2],
    /// Component estimates on the 100-point export grid over [0.05, 0.95].
    pub curves: [Vec<f64>; 2],
}

/// One replication: per-method records or the failure reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub ls: Option<MethodRecord>,
    pub mm: Option<MethodRecord>,
    pub error: Option<String>,
}

/// Aggregated summaries for one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Median of the full-grid ISE per component.
    pub medise: [f64; 2],
    /// Mean of the full-grid ISE after dropping the ceil(0.05 N) largest.
    pub mise5: [f64; 2],
    /// Trimmed mean (same rule) of the grid-trimmed ISE per component.
    pub mise_trim: [f64; 2],
    /// Median of the grid-trimmed ISE per component.
    pub medise_trim: [f64; 2],
    pub beta_bias: [f64; 2],
    pub beta_sd: [f64; 2],
    pub beta_mse: [f64; 2],
    pub mu_mean: f64,
    pub mu_sd: f64,
    /// `(k, proportion of replications selecting k)`.
    pub k_proportions: Vec<(usize, f64)>,
    pub replications_used: usize,
}

/// Full result of a replicated experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: SimulationSpec,
    pub records: Vec<ReplicationRecord>,
    pub ls: Option<MethodSummary>,
    pub mm: Option<MethodSummary>,
    pub failures: usize,
}

/// Derived per-replication RNG stream; splitmix64 of the base seed and the
/// replication index, so replications are independent of execution order.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut s = seed ^ (index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    s = (s ^ (s >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    s = (s ^ (s >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    s ^ (s >> 31)
}

fn fit_one(
    sample: &SimulatedSample,
    method: Method,
    seed: u64,
    grid: &[f64],
    export_grid: &[f64],
    trim: usize,
) -> Result<MethodRecord> {
    let spec = PlamSpec {
        method,
        knot_mode: KnotMode::Uniform,
        solver: SolverConfig {
            seed,
            ..SolverConfig::default()
        },
        ..PlamSpec::mm()
    };
    let fitted = fit(&sample.z, &sample.x, &sample.y, &spec)?;

    let mut ise_eta = [(0.0, 0.0); 2];
    let mut curves: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for j in 0..2 {
        let est: Vec<f64> = grid.iter().map(|&t| fitted.eta(j, t)).collect();
        let truth: Vec<f64> = grid
            .iter()
            .map(|&t| if j == 0 { eta1_true(t) } else { eta2_true(t) })
            .collect();
        ise_eta[j] = ise(&est, &truth, trim);
        curves[j] = export_grid.iter().map(|&t| fitted.eta(j, t)).collect();
    }

    Ok(MethodRecord {
        selected_k: fitted.selected_k[0],
        mu_hat: fitted.mu_hat,
        beta_hat: [fitted.beta_hat[0], fitted.beta_hat[1]],
        ise_eta,
        curves,
    })
}

fn summarize(
    records: &[ReplicationRecord],
    method: Method,
    pick: impl Fn(&ReplicationRecord) -> Option<&MethodRecord>,
) -> Option<MethodSummary> {
    let recs: Vec<&MethodRecord> = records.iter().filter_map(&pick).collect();
    if recs.is_empty() {
        return None;
    }
    let n = recs.len();

    let median = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        if v.len() % 2 == 1 {
            v[v.len() / 2]
        } else {
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        }
    };
    // mean after dropping the ceil(0.05 n) largest values
    let trimmed_mean = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let drop = ((v.len() as f64) * 0.05).ceil() as usize;
        let keep = &v[..v.len() - drop];
        keep.iter().sum::<f64>() / keep.len() as f64
    };

    let mut medise = [0.0; 2];
    let mut mise5 = [0.0; 2];
    let mut mise_trim = [0.0; 2];
    let mut medise_trim = [0.0; 2];
    for j in 0..2 {
        let mut full: Vec<f64> = recs.iter().map(|r| r.ise_eta[j].0).collect();
        let mut trim: Vec<f64> = recs.iter().map(|r| r.ise_eta[j].1).collect();
        medise[j] = median(&mut full.clone());
        mise5[j] = trimmed_mean(&mut full);
        medise_trim[j] = median(&mut trim.clone());
        mise_trim[j] = trimmed_mean(&mut trim);
    }

    let mut beta_bias = [0.0; 2];
    let mut beta_sd = [0.0; 2];
    let mut beta_mse = [0.0; 2];
    for c in 0..2 {
        let vals: Vec<f64> = recs.iter().map(|r| r.beta_hat[c]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        beta_bias[c] = mean - TRUE_BETA[c];
        let var = if n > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        beta_sd[c] = var.sqrt();
        beta_mse[c] = vals
            .iter()
            .map(|v| (v - TRUE_BETA[c]) * (v - TRUE_BETA[c]))
            .sum::<f64>()
            / n as f64;
    }

    let mus: Vec<f64> = recs.iter().map(|r| r.mu_hat).collect();
    let mu_mean = mus.iter().sum::<f64>() / n as f64;
    let mu_sd = if n > 1 {
        (mus.iter().map(|v| (v - mu_mean) * (v - mu_mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };

    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for r in &recs {
        *counts.entry(r.selected_k).or_default() += 1;
    }
    let k_proportions = counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n as f64))
        .collect();

    Some(MethodSummary {
        method,
        medise,
        mise5,
        mise_trim,
        medise_trim,
        beta_bias,
        beta_sd,
        beta_mse,
        mu_mean,
        mu_sd,
        k_proportions,
        replications_used: n,
    })
}

/// Run the replicated experiment for the requested methods.
///
/// Replications are independent and parallelized; each draws its RNG stream
/// from `child_seed(spec.seed, replication)`, so the result set is
/// bit-identical for a fixed spec regardless of thread count. Failed
/// replications are recorded with their error and excluded from summaries.
pub fn run_experiment(spec: &SimulationSpec, methods: &[Method]) -> Result<ExperimentResult> {
    if spec.replications == 0 {
        return Err(PlamError::ZeroReplications);
    }
    if !(1..=6).contains(&spec.model) {
        return Err(PlamError::BadModelId(spec.model));
    }
    let m = spec.grid_size;
    let grid: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let export_grid: Vec<f64> = (0..100).map(|i| 0.05 + 0.9 * i as f64 / 99.0).collect();
    let trim = spec.trim_points();

    let records: Vec<ReplicationRecord> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let stream = child_seed(spec.seed, rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let mut record = ReplicationRecord {
                replication: rep,
                ls: None,
                mm: None,
                error: None,
            };
            let mut sample = match generate(spec.model, spec.n, &mut rng) {
                Ok(s) => s,
                Err(e) => {
                    record.error = Some(e.to_string());
                    return record;
                }
            };
            contaminate(&mut sample, spec.contamination, &mut rng);
            for &method in methods {
                let fit_seed = child_seed(stream, method as u64 + 1);
                match fit_one(&sample, method, fit_seed, &grid, &export_grid, trim) {
                    Ok(r) => match method {
                        Method::Ls => record.ls = Some(r),
                        Method::Mm => record.mm = Some(r),
                    },
                    Err(e) => {
                        record.error = Some(format!("{method:?}: {e}"));
                    }
                }
            }
            record
        })
        .collect();

    let failures = records.iter().filter(|r| r.error.is_some()).count();
    let ls = methods
        .contains(&Method::Ls)
        .then(|| summarize(&records, Method::Ls, |r| r.ls.as_ref()))
        .flatten();
    let mm = methods
        .contains(&Method::Mm)
        .then(|| summarize(&records, Method::Mm, |r| r.mm.as_ref()))
        .flatten();

    Ok(ExperimentResult {
        spec: spec.clone(),
        records,
        ls,
        mm,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n;
        let vb = b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>() / n;
        cov / (va * vb).sqrt()
    }

    #[test]
    fn truth_curves_integrate_to_zero() {
        // Simpson over [0, 1]
        let m = 10_000;
        let h = 1.0 / m as f64;
        let mut acc1 = 0.0;
        let mut acc2 = 0.0;
        for i in 0..=m {
            let t = i as f64 * h;
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc1 += w * eta1_true(t);
            acc2 += w * eta2_true(t);
        }
        assert!((acc1 * h / 3.0).abs() <= 1e-10);
        assert!((acc2 * h / 3.0).abs() <= 1e-10);
    }

    #[test]
    fn model1_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = generate(1, 2000, &mut rng).unwrap();
        let z1: Vec<f64> = (0..2000).map(|i| s.z[(i, 0)]).collect();
        let x1: Vec<f64> = (0..2000).map(|i| s.x[(i, 0)]).collect();
        assert!(corr(&z1, &x1).abs() < 3.0 / (2000f64).sqrt());
    }

    #[test]
    fn model2_copula_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = generate(2, 5000, &mut rng).unwrap();
        let z1: Vec<f64> = (0..5000).map(|i| s.z[(i, 0)]).collect();
        let x1: Vec<f64> = (0..5000).map(|i| s.x[(i, 0)]).collect();
        assert!((corr(&z1, &x1) - 0.7).abs() < 0.05);
        // marginals stay uniform
        let mean = z1.iter().sum::<f64>() / 5000.0;
        assert!((mean - 0.5).abs() < 0.03);
    }

    #[test]
    fn model4_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = generate(4, 500, &mut rng).unwrap();
        for i in 0..500 {
            let v = s.z[(i, 0)];
            assert!([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]
                .iter()
                .any(|t| (v - t).abs() < 1e-12));
        }
    }

    #[test]
    fn model5_multinomial_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = generate(5, 20_000, &mut rng).unwrap();
        let m1 = (0..20_000).map(|i| s.z[(i, 0)]).sum::<f64>() / 20_000.0;
        let m2 = (0..20_000).map(|i| s.z[(i, 1)]).sum::<f64>() / 20_000.0;
        assert!((m1 - 0.25).abs() < 0.01);
        assert!((m2 - 0.5).abs() < 0.01);
        // W1 + W2 never exceeds the number of trials
        for i in 0..20_000 {
            assert!(s.z[(i, 0)] * 10.0 + s.z[(i, 1)] * 10.0 <= 10.0 + 1e-12);
        }
    }

    #[test]
    fn bad_model_id_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            generate(7, 10, &mut rng),
            Err(PlamError::BadModelId(7))
        ));
    }

    #[test]
    fn c0_is_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = generate(1, 50, &mut rng).unwrap();
        let before = s.clone();
        contaminate(&mut s, Contamination::C0, &mut rng);
        assert_eq!(s.y, before.y);
        assert_eq!(s.z, before.z);
        assert_eq!(s.x, before.x);
    }

    #[test]
    fn c2_shift_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut s = generate(1, n, &mut rng).unwrap();
        contaminate(&mut s, Contamination::C2, &mut rng);
        let shifted = (0..n)
            .filter(|&i| (s.y[i] - s.signal[i]) > 7.5)
            .count() as f64;
        let frac = shifted / n as f64;
        let tol = 3.0 * (0.15f64 * 0.85 / n as f64).sqrt();
        assert!((frac - 0.15).abs() < tol, "fraction {frac}");
    }

    #[test]
    fn c3_contaminates_at_most_one_per_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = generate(1, 100, &mut rng).unwrap();
        contaminate(&mut s, Contamination::C3, &mut rng);
        let hits = (0..100).filter(|&i| s.z[(i, 0)] == 20.0).count();
        assert!(hits <= 9);
        assert!(hits >= 1);

        // all covariates in one cell: exactly one contaminated row
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = generate(1, 40, &mut rng).unwrap();
        for i in 0..40 {
            s.x[(i, 0)] = 0.1 + 0.001 * i as f64 / 40.0;
            s.x[(i, 1)] = 0.1;
        }
        contaminate(&mut s, Contamination::C3, &mut rng);
        let hits = (0..40).filter(|&i| s.z[(i, 0)] == 20.0).count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn ise_examples() {
        let truth: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let est = truth.clone();
        assert_eq!(ise(&est, &truth, 0), (0.0, 0.0));

        let shifted: Vec<f64> = truth.iter().map(|v| v + 0.1).collect();
        let (full, trim) = ise(&shifted, &truth, 0);
        assert_abs_diff_eq!(full, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(trim, 0.01, epsilon = 1e-12);

        // brute-force check on a 10-point grid with trimming
        let est2: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let mut hand_full = 0.0;
        for i in 0..10 {
            hand_full += (est2[i] - truth[i]) * (est2[i] - truth[i]);
        }
        hand_full /= 10.0;
        let mut hand_trim = 0.0;
        for i in 1..9 {
            hand_trim += (est2[i] - truth[i]) * (est2[i] - truth[i]);
        }
        hand_trim /= 8.0;
        let (full2, trim2) = ise(&est2, &truth, 1);
        assert_abs_diff_eq!(full2, hand_full, epsilon = 1e-12);
        assert_abs_diff_eq!(trim2, hand_trim, epsilon = 1e-12);
    }

    #[test]
    fn child_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..1000 {
            assert!(seen.insert(child_seed(42, i)));
        }
    }

    #[test]
    fn single_replication_summary_is_the_record() {
        let spec = SimulationSpec::new(1, Contamination::C0, 100, 1, 77);
        let result = run_experiment(&spec, &[Method::Ls]).unwrap();
        let summary = result.ls.as_ref().unwrap();
        let record = result.records[0].ls.as_ref().unwrap();
        assert_eq!(summary.replications_used, 1);
        assert_eq!(summary.medise[0], record.ise_eta[0].0);
        assert_eq!(summary.mu_mean, record.mu_hat);
        assert_eq!(summary.beta_bias[0], record.beta_hat[0] - 3.0);
    }

    #[test]
    fn summaries_satisfy_the_mse_identity() {
        let spec = SimulationSpec::new(1, Contamination::C0, 60, 8, 3);
        let result = run_experiment(&spec, &[Method::Ls]).unwrap();
        let s = result.ls.as_ref().unwrap();
        let n = s.replications_used as f64;
        for c in 0..2 {
            let reconstructed =
                s.beta_bias[c] * s.beta_bias[c] + s.beta_sd[c] * s.beta_sd[c] * (n - 1.0) / n;
            assert_abs_diff_eq!(s.beta_mse[c], reconstructed, epsilon = 1e-10);
        }
    }

    #[test]
    fn experiments_are_seed_deterministic() {
        let spec = SimulationSpec::new(3, Contamination::C1, 60, 3, 12345);
        let a = run_experiment(&spec, &[Method::Ls]).unwrap();
        let b = run_experiment(&spec, &[Method::Ls]).unwrap();
        assert_eq!(
            serde_json::to_string(&a.ls).unwrap(),
            serde_json::to_string(&b.ls).unwrap()
        );
    }
}
