//! Monte Carlo harnesses: the rate sweep, DKW calibration, and the
//! log-likelihood-ratio simulation along a hard-instance family.
//!
//! Replicates are independent tasks keyed by (grid index, replicate index);
//! each derives its own stream via [`sub_seed`], so a grid can be extended
//! without disturbing existing replicates and parallel and serial schedules
//! produce identical reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{fit_min_distance, FitOptions};
use crate::hard_instances::{build_gn_at, HardInstanceSpec};
use crate::measures::{wasserstein_w1, MixingDistribution};
use crate::mixture_model::{mixture_cdf, mixture_pdf, sample_with_rng, ComponentFamily};

/// Densities below this reject the replicate (log-ratio underflow).
pub const DENSITY_FLOOR: f64 = 1e-300;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Replicate stream seed: master seed xor a hash of (grid index, replicate).
pub fn sub_seed(master: u64, grid_index: u64, replicate: u64) -> u64 {
    splitmix64(master ^ splitmix64((grid_index << 32) | (replicate & 0xFFFF_FFFF)))
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[idx - 1]
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Least-squares line fit; returns (slope, stderr of the slope).
fn slope_with_stderr(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let dof = (k - 2.0).max(1.0);
    (slope, (ss_res / dof / sxx).sqrt())
}

/// Configuration of a rate sweep.
#[derive(Debug, Clone)]
pub struct RateSweepConfig<'a, F> {
    pub family: &'a F,
    pub g_true: MixingDistribution,
    /// Atom budget handed to the estimator.
    pub m: usize,
    /// Component count of the degenerate limit the sweep probes; recorded in
    /// the report so the theoretical exponent is reproducible.
    pub m0: usize,
    pub n_grid: Vec<u64>,
    pub reps: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

/// Per-n error summaries and the fitted log-log slope.
#[derive(Debug, Clone, Serialize)]
pub struct RateSweepReport {
    pub m: usize,
    pub m0: usize,
    pub n_grid: Vec<u64>,
    pub seed: u64,
    /// `errors[i][r]` is W1(fit, truth) for replicate r at grid point i.
    pub errors: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub failures: usize,
}

/// Runs the sweep: for each grid point and replicate, draw n observations
/// from the true mixture, fit, and record the W1 error. The slope is fitted
/// on log median error against log n; medians resist the heavy tail of
/// occasional optimizer misses.
pub fn rate_sweep<F: ComponentFamily>(cfg: &RateSweepConfig<'_, F>) -> Result<RateSweepReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    if cfg.reps < 20 {
        return Err(Error::InvalidArgument(
            "need at least 20 replicates per grid point".into(),
        ));
    }
    if cfg.n_grid.len() < 4 {
        return Err(Error::InvalidArgument(
            "n grid needs at least 4 points for a slope".into(),
        ));
    }
    if (cfg.n_grid[cfg.n_grid.len() - 1] as f64) < 30.0 * cfg.n_grid[0] as f64 {
        return Err(Error::InvalidArgument(
            "n grid too narrow for a slope fit; need a span factor of at least 30".into(),
        ));
    }

    let tasks: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|i| (0..cfg.reps).map(move |r| (i, r)))
        .collect();
    let outcomes: Vec<(usize, usize, Result<f64>)> = tasks
        .par_iter()
        .map(|&(i, r)| {
            let n = cfg.n_grid[i] as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, i as u64, r as u64));
            let xs = sample_with_rng(cfg.family, &cfg.g_true, n, &mut rng);
            let fit_opts = FitOptions {
                seed: sub_seed(cfg.seed, i as u64, r as u64).wrapping_add(1),
                ..cfg.fit.clone()
            };
            let err = fit_min_distance(&xs, cfg.family, cfg.m, &fit_opts)
                .map(|fit| wasserstein_w1(&fit.g_hat, &cfg.g_true));
            (i, r, err)
        })
        .collect();

    let mut errors = vec![vec![f64::NAN; cfg.reps]; cfg.n_grid.len()];
    let mut failures = 0;
    for (i, r, outcome) in outcomes {
        match outcome {
            Ok(e) => errors[i][r] = e,
            Err(_) => failures += 1,
        }
    }
    let total = cfg.n_grid.len() * cfg.reps;
    if failures * 20 > total {
        return Err(Error::Diagnostic(format!(
            "{failures} of {total} fits failed, above the 5% abort threshold"
        )));
    }

    let mut mean = Vec::new();
    let mut median = Vec::new();
    let mut iqr = Vec::new();
    for per_n in &errors {
        let clean: Vec<f64> = per_n.iter().copied().filter(|e| e.is_finite()).collect();
        let sorted = sorted_copy(&clean);
        mean.push(clean.iter().sum::<f64>() / clean.len() as f64);
        median.push(median_sorted(&sorted));
        iqr.push(quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25));
    }
    let ln_n: Vec<f64> = cfg.n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let ln_med: Vec<f64> = median.iter().map(|m| m.ln()).collect();
    let (fitted_slope, slope_stderr) = slope_with_stderr(&ln_n, &ln_med);

    Ok(RateSweepReport {
        m: cfg.m,
        m0: cfg.m0,
        n_grid: cfg.n_grid.clone(),
        seed: cfg.seed,
        errors,
        mean,
        median,
        iqr,
        fitted_slope,
        slope_stderr,
        failures,
    })
}

/// Quantiles of sqrt(n) times the KS distance of the empirical CDF from the
/// truth, plus the replicate values for external plotting.
#[derive(Debug, Clone, Serialize)]
pub struct DkwReport {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub q50: f64,
    pub q95: f64,
    pub q99: f64,
    pub values: Vec<f64>,
}

/// Samples a fixed mixture and measures sqrt(n) * sup |F_n - F|. The KS
/// statistic under a continuous truth is distribution free, so the mixture
/// choice only matters for coverage of the code path.
pub fn dkw_calibration(n: usize, reps: usize, seed: u64) -> Result<DkwReport> {
    if n < 100 {
        return Err(Error::InvalidArgument("n must be at least 100".into()));
    }
    if reps < 200 {
        return Err(Error::InvalidArgument(
            "need at least 200 replicates".into(),
        ));
    }
    let family = crate::mixture_model::GaussianLocationFamily::standard();
    let g = MixingDistribution::new(
        vec![(0.8, -1.0), (0.2, 4.0)],
        crate::measures::DEFAULT_THETA_BOUNDS,
    )?;
    dkw_calibration_for(&family, &g, n, reps, seed)
}

/// As [`dkw_calibration`] against a caller-chosen truth.
pub fn dkw_calibration_for<F: ComponentFamily>(
    family: &F,
    g: &MixingDistribution,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<DkwReport> {
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0, r as u64));
            let mut xs = sample_with_rng(family, g, n, &mut rng);
            xs.sort_by(f64::total_cmp);
            let mut sup = 0.0_f64;
            for (i, &x) in xs.iter().enumerate() {
                let f = mixture_cdf(family, g, x);
                sup = sup.max((f - i as f64 / n as f64).abs());
                sup = sup.max((f - (i + 1) as f64 / n as f64).abs());
            }
            (n as f64).sqrt() * sup
        })
        .collect();
    let sorted = sorted_copy(&values);
    Ok(DkwReport {
        n,
        reps,
        seed,
        q50: quantile_sorted(&sorted, 0.50),
        q95: quantile_sorted(&sorted, 0.95),
        q99: quantile_sorted(&sorted, 0.99),
        values,
    })
}

/// Log-likelihood-ratio simulation along the hard-instance family at a
/// fixed rescaled moment u.
#[derive(Debug, Clone, Serialize)]
pub struct LanReport {
    pub u: f64,
    pub n: u64,
    pub reps: usize,
    pub seed: u64,
    /// Z_{n,0}(u) per accepted replicate.
    pub loglr: Vec<f64>,
    pub sample_mean: f64,
    pub sample_var: f64,
    /// Monte Carlo estimate of the limit variance of the linear term.
    pub gamma_hat: f64,
    pub gamma_stderr: f64,
    /// |mean + u^2 gamma/2| / (u^2 gamma): the Gaussian-shift signature.
    pub signature_gap: f64,
    /// sample_var / (u^2 gamma).
    pub var_ratio: f64,
    pub rejected: usize,
}

/// Draws replicates from the null member G_n(0), accumulates the exact
/// log-likelihood ratio against G_n(u), and estimates the limit variance
/// from the Taylor-normalized score
/// `Z_i = f^{(2d-1)}(X_i, pivot) / ((2d-1)! f(X_i, G_n(0)))`.
pub fn lan_simulate<F: ComponentFamily>(
    family: &F,
    spec: &HardInstanceSpec,
    u: f64,
    n: u64,
    reps: usize,
    seed: u64,
) -> Result<LanReport> {
    if u == 0.0 {
        return Err(Error::InvalidArgument(
            "u must be nonzero; the signature normalizes by u^2".into(),
        ));
    }
    if reps < 100 {
        return Err(Error::InvalidArgument(
            "need at least 100 replicates".into(),
        ));
    }
    let g_null = build_gn_at(spec, 0.0, n)?;
    let g_alt = build_gn_at(spec, u, n)?;
    let d = spec.d();
    let deriv_order = 2 * d - 1;
    if deriv_order > family.max_order() {
        return Err(Error::InvalidArgument(format!(
            "family max order {} cannot evaluate the order-{deriv_order} score",
            family.max_order()
        )));
    }
    let factorial: f64 = (1..=deriv_order).map(|k| k as f64).product();
    let pivot = spec.pivot();
    let pivot_weight = spec.pivot_weight();

    let outcomes: Vec<Option<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0, r as u64));
            let xs = sample_with_rng(family, &g_null, n as usize, &mut rng);
            let mut loglr = 0.0;
            let mut score_sq = 0.0;
            for &x in &xs {
                let f0 = mixture_pdf(family, &g_null, x);
                let f1 = mixture_pdf(family, &g_alt, x);
                if f0 < DENSITY_FLOOR || f1 < DENSITY_FLOOR {
                    return None;
                }
                loglr += (f1 / f0).ln();
                let z = family.pdf_theta_deriv(deriv_order, x, pivot) / (factorial * f0);
                score_sq += z * z;
            }
            Some((loglr, score_sq / n as f64))
        })
        .collect();

    let accepted: Vec<(f64, f64)> = outcomes.iter().flatten().copied().collect();
    let rejected = reps - accepted.len();
    if accepted.len() < 2 {
        return Err(Error::Diagnostic(format!(
            "only {} replicates survived the density floor",
            accepted.len()
        )));
    }
    let loglr: Vec<f64> = accepted.iter().map(|a| a.0).collect();
    let k = loglr.len() as f64;
    let sample_mean = loglr.iter().sum::<f64>() / k;
    let sample_var = loglr
        .iter()
        .map(|z| (z - sample_mean) * (z - sample_mean))
        .sum::<f64>()
        / (k - 1.0);

    let pw2 = pivot_weight * pivot_weight;
    let gammas: Vec<f64> = accepted.iter().map(|a| pw2 * a.1).collect();
    let gamma_hat = gammas.iter().sum::<f64>() / k;
    let gamma_var = gammas
        .iter()
        .map(|g| (g - gamma_hat) * (g - gamma_hat))
        .sum::<f64>()
        / (k - 1.0);
    let gamma_stderr = (gamma_var / k).sqrt();
    if gamma_hat <= 0.0 {
        return Err(Error::Diagnostic("estimated gamma is not positive".into()));
    }

    let shift = u * u * gamma_hat;
    Ok(LanReport {
        u,
        n,
        reps,
        seed,
        signature_gap: (sample_mean + shift / 2.0).abs() / shift,
        var_ratio: sample_var / shift,
        loglr,
        sample_mean,
        sample_var,
        gamma_hat,
        gamma_stderr,
        rejected,
    })
}

/// One row of the contiguity table: the empirical level-0.25 critical value
/// under G_n(0) and the power against G_n(u).
#[derive(Debug, Clone, Serialize)]
pub struct ContiguityRow {
    pub n: u64,
    pub critical_value: f64,
    pub power: f64,
    pub null_reps: usize,
    pub alt_reps: usize,
}

/// Likelihood-ratio test power along the family at test level 0.25.
///
/// For each n the critical value is the empirical 0.75 quantile of the exact
/// log-likelihood ratio under the null member; power is the rejection rate
/// under the alternative. Alternative streams are keyed by (grid index,
/// replicate) only, so runs at different u share randomness.
pub fn contiguity_demo<F: ComponentFamily>(
    family: &F,
    spec: &HardInstanceSpec,
    u: f64,
    n_grid: &[u64],
    reps: usize,
    seed: u64,
) -> Result<Vec<ContiguityRow>> {
    if reps < 100 {
        return Err(Error::InvalidArgument(
            "need at least 100 replicates".into(),
        ));
    }
    if n_grid.is_empty() {
        return Err(Error::InvalidArgument("n grid must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for (i, &n) in n_grid.iter().enumerate() {
        let g_null = build_gn_at(spec, 0.0, n)?;
        let g_alt = build_gn_at(spec, u, n)?;
        let loglr = |from_alt: bool, stream: u64, r: u64| -> Option<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, stream, r));
            let g_draw = if from_alt { &g_alt } else { &g_null };
            let xs = sample_with_rng(family, g_draw, n as usize, &mut rng);
            let mut acc = 0.0;
            for &x in &xs {
                let f0 = mixture_pdf(family, &g_null, x);
                let f1 = mixture_pdf(family, &g_alt, x);
                if f0 < DENSITY_FLOOR || f1 < DENSITY_FLOOR {
                    return None;
                }
                acc += (f1 / f0).ln();
            }
            Some(acc)
        };
        let null_lrs: Vec<f64> = (0..reps)
            .into_par_iter()
            .filter_map(|r| loglr(false, 2 * i as u64, r as u64))
            .collect();
        let alt_lrs: Vec<f64> = (0..reps)
            .into_par_iter()
            .filter_map(|r| loglr(true, 2 * i as u64 + 1, r as u64))
            .collect();
        if null_lrs.len() < reps / 2 || alt_lrs.len() < reps / 2 {
            return Err(Error::Diagnostic(
                "too many replicates hit the density floor".into(),
            ));
        }
        let crit = quantile_sorted(&sorted_copy(&null_lrs), 0.75);
        let power = alt_lrs.iter().filter(|&&z| z > crit).count() as f64 / alt_lrs.len() as f64;
        rows.push(ContiguityRow {
            n,
            critical_value: crit,
            power,
            null_reps: null_lrs.len(),
            alt_reps: alt_lrs.len(),
        });
    }
    Ok(rows)
}
