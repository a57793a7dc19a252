//! Numerical strong-identifiability margins and the separation-ratio
//! functional.
//!
//! The margin at a support (theta_1, ..., theta_m) and order k is the
//! infimum over unit coefficient vectors alpha of the sup norm of
//! `sum_{p<=k} sum_j alpha_{p,j} F^(p)(x, theta_j)`. A positive value is
//! evidence (not proof) that no such combination vanishes, which is what
//! pins the estimation exponent. The infimum is approximated by multistart
//! local descent over the unit sphere; two restarts are seeded with the
//! smallest right-singular vectors of the evaluation matrix, the rest are
//! random directions.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{wasserstein_w1, MixingDistribution};
use crate::mixture_model::{mixture_cdf, ComponentFamily};
use crate::optim::{golden_section_max, nelder_mead, NmOptions};

/// Default spacing of the margin evaluation grid.
pub const DEFAULT_GRID_STEP: f64 = 0.05;

/// A margin query: family, support, derivative order, grid and budget.
#[derive(Debug, Clone)]
pub struct MarginQuery<'a, F> {
    pub family: &'a F,
    pub support: Vec<f64>,
    pub order: usize,
    pub x_grid: Vec<f64>,
    pub search_budget: usize,
    pub seed: u64,
}

impl<'a, F: ComponentFamily> MarginQuery<'a, F> {
    /// Builds a query with the default grid (support range widened by the
    /// family's x margin, step 0.05), budget 10_000 and seed 0.
    pub fn new(family: &'a F, support: Vec<f64>, order: usize) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidArgument("support must be nonempty".into()));
        }
        let mut sorted = support.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-9) {
            return Err(Error::InvalidArgument(
                "support points must be pairwise distinct: the margin at a \
                 coincident support is trivially zero"
                    .into(),
            ));
        }
        if order > family.max_order() {
            return Err(Error::InvalidArgument(format!(
                "order {order} exceeds family max order {}",
                family.max_order()
            )));
        }
        let lo = sorted[0] - family.x_margin();
        let hi = sorted[sorted.len() - 1] + family.x_margin();
        let steps = ((hi - lo) / DEFAULT_GRID_STEP).ceil() as usize;
        let x_grid = (0..=steps)
            .map(|i| lo + i as f64 * DEFAULT_GRID_STEP)
            .collect();
        Ok(Self {
            family,
            support,
            order,
            x_grid,
            search_budget: 10_000,
            seed: 0,
        })
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.search_budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_grid(mut self, x_grid: Vec<f64>) -> Self {
        self.x_grid = x_grid;
        self
    }
}

/// Result of a margin search. `argmin_alpha` is unit norm, indexed
/// `alpha[p * m + j]` for derivative order p and support index j.
#[derive(Debug, Clone, Serialize)]
pub struct MarginResult {
    pub margin: f64,
    pub argmin_alpha: Vec<f64>,
    pub evals_used: usize,
}

/// Evaluation matrix: rows are grid points, columns are (p, j) pairs in
/// p-major order.
fn design_matrix<F: ComponentFamily>(
    family: &F,
    support: &[f64],
    order: usize,
    x_grid: &[f64],
) -> DMatrix<f64> {
    let m = support.len();
    DMatrix::from_fn(x_grid.len(), (order + 1) * m, |row, col| {
        let p = col / m;
        let j = col % m;
        family.cdf_theta_deriv(p, x_grid[row], support[j])
    })
}

/// Normalized sup-norm objective `max_x |sum alpha_{p,j} F^(p)(x, theta_j)| / ||alpha||`.
/// Exposed so degenerate supports and scaling behavior can be probed
/// directly, bypassing the query validation.
pub fn margin_objective<F: ComponentFamily>(
    family: &F,
    support: &[f64],
    order: usize,
    x_grid: &[f64],
    alpha: &[f64],
) -> f64 {
    let b = design_matrix(family, support, order, x_grid);
    objective_on(&b, alpha)
}

fn objective_on(b: &DMatrix<f64>, alpha: &[f64]) -> f64 {
    let norm: f64 = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return f64::INFINITY;
    }
    let mut worst = 0.0_f64;
    for row in 0..b.nrows() {
        let mut acc = 0.0;
        for col in 0..b.ncols() {
            acc += b[(row, col)] * alpha[col];
        }
        worst = worst.max(acc.abs());
    }
    worst / norm
}

/// Upper estimate of the identifiability margin by multistart descent.
/// Nonincreasing in the search budget; a positive value is evidence, not a
/// certificate.
pub fn identifiability_margin<F: ComponentFamily>(q: &MarginQuery<'_, F>) -> Result<MarginResult> {
    if q.x_grid.is_empty() {
        return Err(Error::InvalidArgument("x grid must be nonempty".into()));
    }
    if q.search_budget < 100 {
        return Err(Error::InvalidArgument(
            "search budget must be at least 100".into(),
        ));
    }
    let b = design_matrix(q.family, &q.support, q.order, &q.x_grid);
    let dim = b.ncols();

    let mut starts: Vec<Vec<f64>> = Vec::new();
    // The L2 minimizer and its runner-up seed the descent; the true L-inf
    // minimizer is usually a small rotation away.
    let svd = b.clone().svd(false, true);
    if let Some(vt) = svd.v_t.as_ref() {
        let r = vt.nrows();
        starts.push(vt.row(r - 1).iter().copied().collect());
        if r >= 2 {
            starts.push(vt.row(r - 2).iter().copied().collect());
        }
    }
    let n_restarts = (q.search_budget / 1000).clamp(4, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(q.seed);
    while starts.len() < n_restarts {
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        starts.push(v);
    }

    let per_start = q.search_budget / starts.len();
    let mut best = f64::INFINITY;
    let mut best_alpha = vec![0.0; dim];
    let mut used = 0;
    for start in &starts {
        let opts = NmOptions {
            max_evals: per_start,
            f_tol: 1e-14,
            x_tol: 1e-10,
            init_step: 0.25,
        };
        let r = nelder_mead(|alpha| objective_on(&b, alpha), start, &opts);
        used += r.evals;
        if r.fx < best {
            best = r.fx;
            best_alpha = r.x;
        }
    }
    let norm: f64 = best_alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    for a in best_alpha.iter_mut() {
        *a /= norm;
    }
    Ok(MarginResult {
        margin: best,
        argmin_alpha: best_alpha,
        evals_used: used,
    })
}

/// Separation diagnostics for a pair of mixing distributions: the sup-norm
/// gap between their mixture CDFs, their W1 distance, and the ratio
/// `gap / W1^{2m - 2m0 + 1}`.
#[derive(Debug, Clone, Serialize)]
pub struct SeparationReport {
    pub sup_cdf_gap: f64,
    pub w1: f64,
    pub exponent: u32,
    pub ratio: f64,
}

/// Computes the separation ratio with the exponent `2m - 2m0 + 1` derived
/// from the arguments rather than caller-supplied, so mismatched experiment
/// configurations cannot slip through.
pub fn separation_ratio<F: ComponentFamily>(
    family: &F,
    g1: &MixingDistribution,
    g2: &MixingDistribution,
    m: usize,
    m0: usize,
) -> Result<SeparationReport> {
    if m0 == 0 || m < m0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= m0 <= m, got m0={m0}, m={m}"
        )));
    }
    if g1.num_atoms() > m || g2.num_atoms() > m {
        return Err(Error::InvalidArgument(format!(
            "measures have {} and {} atoms, beyond the class bound m={m}",
            g1.num_atoms(),
            g2.num_atoms()
        )));
    }
    if measures_coincide(g1, g2) {
        return Err(Error::InvalidArgument("g1 = g2: ratio undefined".into()));
    }
    let sup = sup_cdf_gap(family, g1, g2);
    let w1 = wasserstein_w1(g1, g2);
    let exponent = (2 * m - 2 * m0 + 1) as u32;
    Ok(SeparationReport {
        sup_cdf_gap: sup,
        w1,
        exponent,
        ratio: sup / w1.powi(exponent as i32),
    })
}

fn measures_coincide(g1: &MixingDistribution, g2: &MixingDistribution) -> bool {
    g1.num_atoms() == g2.num_atoms()
        && g1.atoms().iter().zip(g2.atoms()).all(|(a, b)| {
            (a.weight - b.weight).abs() < 1e-12 && (a.location - b.location).abs() < 1e-12
        })
}

/// Sup over x of |F(x, g1) - F(x, g2)|: coarse grid over the joint support,
/// fine spacing near every atom, then a golden-section polish around the
/// best grid point.
pub fn sup_cdf_gap<F: ComponentFamily>(
    family: &F,
    g1: &MixingDistribution,
    g2: &MixingDistribution,
) -> f64 {
    let margin = family.x_margin();
    let atoms: Vec<f64> = g1.locations().chain(g2.locations()).collect();
    let lo = atoms.iter().copied().fold(f64::INFINITY, f64::min) - margin;
    let hi = atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max) + margin;

    let gap = |x: f64| (mixture_cdf(family, g1, x) - mixture_cdf(family, g2, x)).abs();

    let mut xs: Vec<f64> = Vec::new();
    let coarse = 0.05;
    let steps = ((hi - lo) / coarse).ceil() as usize;
    xs.extend((0..=steps).map(|i| lo + i as f64 * coarse));
    for &a in &atoms {
        let fine = 1e-3;
        let half = 0.25;
        let n = (2.0 * half / fine) as usize;
        xs.extend((0..=n).map(|i| a - half + i as f64 * fine));
    }

    let mut best_x = lo;
    let mut best = 0.0;
    let mut best_step = coarse;
    for &x in &xs {
        let v = gap(x);
        if v > best {
            best = v;
            best_x = x;
            best_step = if atoms.iter().any(|&a| (x - a).abs() <= 0.25) {
                1e-3
            } else {
                coarse
            };
        }
    }
    let (_, polished) = golden_section_max(gap, best_x - best_step, best_x + best_step, 1e-10);
    polished.max(best)
}
