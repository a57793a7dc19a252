//! Least-favorable mixing-distribution families G_n(u).
//!
//! Around a base measure with m0 atoms, the m0-th atom is split into a block
//! of d = m - m0 + 1 atoms whose rescaled moments are pinned: orders
//! 1..2d-2 equal fixed base moments, and order 2d-1 equals the free scalar u.
//! The block shrinks onto the base atom at scale n^{-1/(4d-2)}, so two
//! members G_n(u1), G_n(u2) separate in W1 at exactly that rate while their
//! mixtures stay nearly indistinguishable from n observations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{wasserstein_w1, MixingDistribution, DEFAULT_THETA_BOUNDS};
use crate::moment_problem::{solve_moment_problem, MomentSequence};

/// Specification of a hard-instance family.
#[derive(Debug, Clone)]
pub struct HardInstanceSpec {
    g0: MixingDistribution,
    m: usize,
    base_moments: Vec<f64>,
    /// Rescaled order-(2d-1) moment of the perturbed block.
    pub u: f64,
    /// Sample-size index controlling the shrink scale.
    pub n: u64,
}

/// The perturbed block of a built instance: weights within the block
/// (summing to 1) and the unscaled offsets h_j(u).
#[derive(Debug, Clone, Serialize)]
pub struct PerturbedBlock {
    pub weights: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl HardInstanceSpec {
    /// Validates and builds a family specification.
    ///
    /// `g0` is the limit point with m0 atoms; its largest-location atom is
    /// perturbed and must be strictly interior to the parameter interval.
    /// `base_moments` are the pinned block moments of orders 1..=2d-2 and
    /// must pass the Hankel positivity test.
    pub fn new(g0: MixingDistribution, m: usize, base_moments: Vec<f64>) -> Result<Self> {
        let m0 = g0.num_atoms();
        if m < m0 {
            return Err(Error::InvalidArgument(format!(
                "m = {m} must be at least the base atom count m0 = {m0}"
            )));
        }
        let d = m - m0 + 1;
        if base_moments.len() != 2 * d - 2 {
            return Err(Error::InvalidArgument(format!(
                "need 2d-2 = {} base moments, got {}",
                2 * d - 2,
                base_moments.len()
            )));
        }
        let (lo, hi) = g0.theta_bounds();
        let pivot = g0.atoms()[m0 - 1].location;
        if pivot <= lo || pivot >= hi {
            return Err(Error::InvalidArgument(format!(
                "perturbed atom at theta={pivot} must be strictly interior to [{lo}, {hi}]"
            )));
        }
        if d > 1 {
            // Hankel feasibility of (1, m_1, ..., m_{2d-2}): minors up to d-1.
            let mut vals = vec![1.0];
            vals.extend_from_slice(&base_moments);
            let report = crate::moment_problem::hankel_determinants(&MomentSequence::new(vals)?)?;
            for (i, &det) in report.dets.iter().enumerate().take(d - 1) {
                if det <= 0.0 {
                    return Err(Error::Infeasible(format!(
                        "base moments fail Hankel positivity at k = {}: det = {det:e}",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self {
            g0,
            m,
            base_moments,
            u: 0.0,
            n: 1,
        })
    }

    /// The worked two-component family: base delta_0 on [-10, 10], m = 2,
    /// block moments (0, 4).
    pub fn worked_example() -> Self {
        let g0 = MixingDistribution::dirac(0.0, DEFAULT_THETA_BOUNDS)
            .expect("origin is interior to the default interval");
        Self::new(g0, 2, vec![0.0, 4.0]).expect("the default block moments are feasible")
    }

    pub fn with_u(mut self, u: f64) -> Self {
        self.u = u;
        self
    }

    pub fn at_n(mut self, n: u64) -> Self {
        self.n = n;
        self
    }

    pub fn g0(&self) -> &MixingDistribution {
        &self.g0
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn m0(&self) -> usize {
        self.g0.num_atoms()
    }

    /// Block size d = m - m0 + 1.
    pub fn d(&self) -> usize {
        self.m - self.m0() + 1
    }

    pub fn base_moments(&self) -> &[f64] {
        &self.base_moments
    }

    /// Location of the perturbed atom.
    pub fn pivot(&self) -> f64 {
        self.g0.atoms()[self.m0() - 1].location
    }

    /// Weight of the perturbed atom.
    pub fn pivot_weight(&self) -> f64 {
        self.g0.atoms()[self.m0() - 1].weight
    }

    /// The shrink scale n^{-1/(4d-2)}.
    pub fn scale(&self, n: u64) -> f64 {
        (n as f64).powf(-1.0 / (4.0 * self.d() as f64 - 2.0))
    }

    /// Growth schedule for the parameter window; grows without bound while
    /// the scaled block still collapses onto the pivot.
    pub fn u_max(&self, n: u64) -> f64 {
        (1.0 + n as f64).ln()
    }
}

/// Solves the block moment problem for `(1, base..., u)`: d weights and
/// offsets h_j(u) with the pinned moments.
pub fn solve_block(spec: &HardInstanceSpec, u: f64) -> Result<PerturbedBlock> {
    let d = spec.d();
    let mut vals = Vec::with_capacity(2 * d);
    vals.push(1.0);
    vals.extend_from_slice(&spec.base_moments);
    vals.push(u);
    let block = solve_moment_problem(&MomentSequence::new(vals)?, d)?;
    Ok(PerturbedBlock {
        weights: block.weights().collect(),
        offsets: block.locations().collect(),
    })
}

/// Builds G_n(u): the base atoms except the pivot, plus the pivot weight
/// spread over the block `pivot + scale * h_j(u)`.
pub fn build_gn(spec: &HardInstanceSpec) -> Result<MixingDistribution> {
    build_gn_at(spec, spec.u, spec.n)
}

/// As [`build_gn`] with explicit u and n.
pub fn build_gn_at(spec: &HardInstanceSpec, u: f64, n: u64) -> Result<MixingDistribution> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let block = solve_block(spec, u)?;
    let scale = spec.scale(n);
    let pivot = spec.pivot();
    let pivot_weight = spec.pivot_weight();
    let (lo, hi) = spec.g0.theta_bounds();

    let mut atoms: Vec<(f64, f64)> = spec.g0.atoms()[..spec.m0() - 1]
        .iter()
        .map(|a| (a.weight, a.location))
        .collect();
    for (&w, &h) in block.weights.iter().zip(&block.offsets) {
        let t = pivot + scale * h;
        if t < lo || t > hi {
            return Err(Error::Domain(format!(
                "block atom lands at theta={t}, outside [{lo}, {hi}]; a larger n keeps the block interior"
            )));
        }
        atoms.push((pivot_weight * w, t));
    }
    MixingDistribution::new(atoms, (lo, hi))
}

/// W1 distance of G_n(u) to the base measure along a grid of n, with the
/// observed rate constant `C(u) = max_n W * n^{1/(4d-2)}`.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub points: Vec<(u64, f64)>,
    pub c_u: f64,
}

pub fn convergence_to_g0(
    spec: &HardInstanceSpec,
    u: f64,
    n_grid: &[u64],
) -> Result<ConvergenceReport> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "n grid must be nonempty and increasing".into(),
        ));
    }
    let mut points = Vec::with_capacity(n_grid.len());
    let mut c_u: f64 = 0.0;
    let inv_rate = 1.0 / (4.0 * spec.d() as f64 - 2.0);
    for &n in n_grid {
        let gn = build_gn_at(spec, u, n)?;
        let w = wasserstein_w1(&gn, &spec.g0);
        c_u = c_u.max(w * (n as f64).powf(inv_rate));
        points.push((n, w));
    }
    Ok(ConvergenceReport { points, c_u })
}

/// W1 separation of G_n(u1) and G_n(u2) along a grid of n. Each value equals
/// `c * n^{-1/(4d-2)}` with `c = W(G_1(u1), G_1(u2)) > 0`.
pub fn separation_rate(
    spec: &HardInstanceSpec,
    u1: f64,
    u2: f64,
    n_grid: &[u64],
) -> Result<Vec<(u64, f64)>> {
    if u1 == u2 {
        return Err(Error::InvalidArgument("u1 and u2 must differ".into()));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "n grid must be nonempty and increasing".into(),
        ));
    }
    n_grid
        .iter()
        .map(|&n| {
            Ok((
                n,
                wasserstein_w1(&build_gn_at(spec, u1, n)?, &build_gn_at(spec, u2, n)?),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{homothety, moment};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_example_at_u0_is_symmetric_pair() {
        let spec = HardInstanceSpec::worked_example();
        for n in [1_u64, 100, 4096] {
            let g = build_gn_at(&spec, 0.0, n).unwrap();
            let eps = (n as f64).powf(-1.0 / 6.0);
            assert_eq!(g.num_atoms(), 2);
            assert!((g.atoms()[0].location + 2.0 * eps).abs() < 1e-12);
            assert!((g.atoms()[1].location - 2.0 * eps).abs() < 1e-12);
            assert!((g.atoms()[0].weight - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn worked_example_at_u12_is_skewed_pair() {
        let spec = HardInstanceSpec::worked_example();
        let n = 1000;
        let g = build_gn_at(&spec, 12.0, n).unwrap();
        let eps = (n as f64).powf(-1.0 / 6.0);
        assert!((g.atoms()[0].location + eps).abs() < 1e-12);
        assert!((g.atoms()[0].weight - 0.8).abs() < 1e-10);
        assert!((g.atoms()[1].location - 4.0 * eps).abs() < 1e-12);
        assert!((g.atoms()[1].weight - 0.2).abs() < 1e-10);
    }

    #[test]
    fn separation_is_exactly_homothetic() {
        let spec = HardInstanceSpec::worked_example();
        let (u1, u2) = (0.0, 12.0);
        let g1_1 = build_gn_at(&spec, u1, 1).unwrap();
        let g2_1 = build_gn_at(&spec, u2, 1).unwrap();
        for n in [10_u64, 1000, 100_000] {
            let s = spec.scale(n);
            let h1 = homothety(&g1_1, spec.pivot(), s).unwrap();
            let h2 = homothety(&g2_1, spec.pivot(), s).unwrap();
            let direct = wasserstein_w1(
                &build_gn_at(&spec, u1, n).unwrap(),
                &build_gn_at(&spec, u2, n).unwrap(),
            );
            assert!((direct - wasserstein_w1(&h1, &h2)).abs() < 1e-12);
            assert!((direct - s * wasserstein_w1(&g1_1, &g2_1)).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_matches_mean_absolute_offset() {
        let spec = HardInstanceSpec::worked_example();
        let grid = [100_u64, 1000, 10_000];
        // W(G_n(u), delta_0) = sum_j w_j |theta_j| for a block straddling 0.
        let r0 = convergence_to_g0(&spec, 0.0, &grid).unwrap();
        for &(n, w) in &r0.points {
            let eps = (n as f64).powf(-1.0 / 6.0);
            assert!((w - 2.0 * eps).abs() < 1e-12);
        }
        assert!((r0.c_u - 2.0).abs() < 1e-10);

        let r12 = convergence_to_g0(&spec, 12.0, &grid).unwrap();
        for &(n, w) in &r12.points {
            let eps = (n as f64).powf(-1.0 / 6.0);
            assert!((w - 1.6 * eps).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaled_rate_is_constant_across_n() {
        let spec = HardInstanceSpec::worked_example();
        let grid: Vec<u64> = vec![100, 1000, 10_000, 100_000, 1_000_000];
        let pts = separation_rate(&spec, 0.0, 12.0, &grid).unwrap();
        let c0 = pts[0].1 * (pts[0].0 as f64).powf(1.0 / 6.0);
        assert!((c0 - 1.8).abs() < 1e-10);
        for &(n, w) in &pts {
            assert!((w * (n as f64).powf(1.0 / 6.0) - c0).abs() < 1e-12);
        }
    }

    #[test]
    fn separation_rejects_equal_u() {
        let spec = HardInstanceSpec::worked_example();
        assert!(matches!(
            separation_rate(&spec, 3.0, 3.0, &[10, 100, 1000]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn separation_positive_for_random_pairs() {
        let spec = HardInstanceSpec::worked_example();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let u1: f64 = rng.random_range(-5.0..5.0);
            let u2: f64 = rng.random_range(-5.0..5.0);
            if (u1 - u2).abs() < 1e-9 {
                continue;
            }
            let pts = separation_rate(&spec, u1, u2, &[1000]).unwrap();
            assert!(pts[0].1 > 0.0, "u1={u1} u2={u2}");
        }
    }

    #[test]
    fn block_moments_are_pinned() {
        let spec = HardInstanceSpec::worked_example();
        for u in [-5.0, -1.0, 0.0, 3.5, 12.0] {
            let block = solve_block(&spec, u).unwrap();
            let d = spec.d();
            for k in 0..=2 * d - 1 {
                let got: f64 = block
                    .weights
                    .iter()
                    .zip(&block.offsets)
                    .map(|(&w, &h)| w * h.powi(k as i32))
                    .sum();
                let want = match k {
                    0 => 1.0,
                    j if j < 2 * d - 1 => spec.base_moments()[j - 1],
                    _ => u,
                };
                assert!((got - want).abs() < 1e-8, "u={u} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn tight_bounds_produce_domain_error() {
        let g0 = MixingDistribution::dirac(0.0, (-0.1, 0.1)).unwrap();
        let spec = HardInstanceSpec::new(g0, 2, vec![0.0, 4.0]).unwrap();
        let err = build_gn_at(&spec, 0.0, 1).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err:?}");
        // Large n shrinks the block inside the interval.
        assert!(build_gn_at(&spec, 0.0, 10_u64.pow(12)).is_ok());
    }

    #[test]
    fn multi_atom_base_keeps_outer_atoms() {
        let g0 =
            MixingDistribution::new(vec![(0.4, -3.0), (0.6, 1.0)], DEFAULT_THETA_BOUNDS).unwrap();
        let spec = HardInstanceSpec::new(g0, 3, vec![0.0, 4.0]).unwrap();
        assert_eq!(spec.d(), 2);
        let g = build_gn_at(&spec, 12.0, 4096).unwrap();
        assert_eq!(g.num_atoms(), 3);
        assert!((g.atoms()[0].location + 3.0).abs() < 1e-15);
        assert!((g.atoms()[0].weight - 0.4).abs() < 1e-15);
        // The pivot block carries the pivot weight.
        let block_mass: f64 = g.atoms()[1..].iter().map(|a| a.weight).sum();
        assert!((block_mass - 0.6).abs() < 1e-10);
        // Overall first moment of the scaled block stays at the pivot.
        assert!((moment(&g, 1) - (0.4 * -3.0 + 0.6 * 1.0)).abs() < 1e-10);
    }

    #[test]
    fn spec_validation_errors() {
        let g0 = MixingDistribution::dirac(0.0, DEFAULT_THETA_BOUNDS).unwrap();
        assert!(HardInstanceSpec::new(g0.clone(), 0, vec![]).is_err());
        assert!(HardInstanceSpec::new(g0.clone(), 2, vec![0.0]).is_err());
        assert!(matches!(
            HardInstanceSpec::new(g0.clone(), 2, vec![0.0, -4.0]),
            Err(Error::Infeasible(_))
        ));
        let edge = MixingDistribution::dirac(10.0, DEFAULT_THETA_BOUNDS).unwrap();
        assert!(HardInstanceSpec::new(edge, 2, vec![0.0, 4.0]).is_err());
    }

    #[test]
    fn u_max_grows_unboundedly_but_slowly() {
        let spec = HardInstanceSpec::worked_example();
        assert!(spec.u_max(100) < spec.u_max(10_000));
        // The window times the shrink scale still vanishes.
        let v1 = spec.u_max(100) * spec.scale(100);
        let v2 = spec.u_max(1_000_000) * spec.scale(1_000_000);
        assert!(v2 < v1);
    }
}
