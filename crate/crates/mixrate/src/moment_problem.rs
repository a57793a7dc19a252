//! Hankel realizability criteria and reconstruction of the unique d-point
//! distribution from its first 2d-1 moments.
//!
//! The classical route: positivity of the leading Hankel minors certifies
//! that a truncated moment sequence comes from a measure with at least d
//! support points, and for any choice of the (2d-1)-th moment there is a
//! unique d-point measure matching the sequence. Reconstruction solves the
//! Hankel system for the monic orthogonal polynomial, roots it via the
//! companion matrix, and recovers weights from a Vandermonde solve.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{moment, MixingDistribution, DEFAULT_THETA_BOUNDS};

/// Relative tolerance for "det M_k > 0", scaled by the product of diagonal
/// magnitudes of M_k.
pub const HANKEL_DET_TOL: f64 = 1e-9;

/// Weights computed below this magnitude are clamped; anything more negative
/// is reported as infeasible.
pub const WEIGHT_CLAMP_TOL: f64 = 1e-10;

/// Relative tolerance for the moment round trip enforced by
/// [`solve_moment_problem`].
pub const ROUND_TRIP_TOL: f64 = 1e-8;

/// A truncated moment sequence `(m_0, m_1, ..., m_K)` with `m_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSequence {
    values: Vec<f64>,
}

impl MomentSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("moment sequence is empty".into()));
        }
        if values[0] != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "m_0 must be exactly 1, got {}",
                values[0]
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite moment {bad}")));
        }
        Ok(Self { values })
    }

    /// Highest moment order K.
    pub fn order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }
}

/// Determinants of the leading Hankel matrices and the detected support size.
#[derive(Debug, Clone, Serialize)]
pub struct HankelReport {
    /// `dets[i]` is det M_{i+1}, for k = 1..=K/2.
    pub dets: Vec<f64>,
    /// Some(p) when det M_k > 0 for k < p and det M_p vanishes within
    /// tolerance: the sequence is realized by a measure with exactly p
    /// support points.
    pub realizable_order: Option<usize>,
}

fn hankel_matrix(ms: &[f64], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k + 1, k + 1, |i, j| ms[i + j])
}

fn hankel_tolerance(ms: &[f64], k: usize) -> f64 {
    let scale: f64 = (0..=k).map(|i| ms[2 * i].abs().max(1e-300)).product();
    HANKEL_DET_TOL * scale.max(f64::MIN_POSITIVE)
}

/// Determinants det M_k for k = 1..=K/2, with the classical
/// classification of the first vanishing determinant.
pub fn hankel_determinants(ms: &MomentSequence) -> Result<HankelReport> {
    if ms.order() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need moments at least up to order 2, got K={}",
            ms.order()
        )));
    }
    let kmax = ms.order() / 2;
    let mut dets = Vec::with_capacity(kmax);
    let mut realizable_order = None;
    let mut decided = false;
    for k in 1..=kmax {
        let det = hankel_matrix(ms.values(), k).determinant();
        dets.push(det);
        if !decided {
            let tol = hankel_tolerance(ms.values(), k);
            if det.abs() <= tol {
                realizable_order = Some(k);
                decided = true;
            } else if det < 0.0 {
                decided = true; // not a moment sequence of a positive measure
            }
        }
    }
    Ok(HankelReport {
        dets,
        realizable_order,
    })
}

/// Standardized copy of `ms`: centered by m_1 and scaled by the standard
/// deviation, via the binomial expansion. Returns (centered moments, c, s).
fn standardize(ms: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let c = ms[1];
    let var = ms[2] - c * c;
    if var <= 0.0 {
        return Err(Error::Infeasible(format!(
            "det M_1 = {var:e} is not positive; sequence concentrates on one point"
        )));
    }
    let s = var.sqrt();
    let mut out = vec![0.0; ms.len()];
    // Pascal's triangle row by row.
    let mut binom = vec![1.0_f64];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &b) in binom.iter().enumerate() {
            acc += b * (-c).powi((k - i) as i32) * ms[i];
        }
        *slot = acc / s.powi(k as i32);
        let mut next = vec![1.0; k + 2];
        for i in 1..=k {
            next[i] = binom[i - 1] + binom[i];
        }
        binom = next;
    }
    Ok((out, c, s))
}

/// Reconstructs the unique distribution with exactly `d` support points whose
/// moments 0..=2d-1 match `ms`. Requires `ms` to have order K = 2d-1 and the
/// leading Hankel minors of the even part to be positive.
pub fn solve_moment_problem(ms: &MomentSequence, d: usize) -> Result<MixingDistribution> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    if ms.order() != 2 * d - 1 {
        return Err(Error::InvalidArgument(format!(
            "need K = 2d-1 = {} moments beyond m_0, got K = {}",
            2 * d - 1,
            ms.order()
        )));
    }
    if d == 1 {
        let t = ms.get(1);
        let bounds = covering_bounds(&[t]);
        return MixingDistribution::new(vec![(1.0, t)], bounds);
    }

    let (sm, c, s) = standardize(ms.values())?;

    // Feasibility: det M'_k > 0 for k = 1..d-1 on the standardized sequence
    // (affine standardization preserves the signs of the Hankel minors).
    for k in 1..d {
        let det = hankel_matrix(&sm, k).determinant();
        let tol = hankel_tolerance(&sm, k);
        if det <= tol {
            return Err(Error::Infeasible(format!(
                "Hankel minor det M_{k} = {det:e} is not positive (tolerance {tol:e})"
            )));
        }
    }

    // Monic orthogonal polynomial: H c = -b with H_{ij} = m'_{i+j}.
    let h = DMatrix::from_fn(d, d, |i, j| sm[i + j]);
    let b = DVector::from_fn(d, |i, _| sm[d + i]);
    let coeffs = h
        .lu()
        .solve(&(-b))
        .ok_or_else(|| Error::IllConditioned("Hankel system is numerically singular".into()))?;

    // Companion matrix of y^d + c_{d-1} y^{d-1} + ... + c_0.
    let mut comp = DMatrix::zeros(d, d);
    for i in 1..d {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..d {
        comp[(i, d - 1)] = -coeffs[i];
    }
    let eig = comp.complex_eigenvalues();
    let mut roots = Vec::with_capacity(d);
    for ev in eig.iter() {
        if ev.im.abs() > 1e-8 * (1.0 + ev.re.abs()) {
            return Err(Error::IllConditioned(format!(
                "complex root {} + {}i: support points are numerically degenerate",
                ev.re, ev.im
            )));
        }
        roots.push(ev.re);
    }
    roots.sort_by(f64::total_cmp);
    let span = roots[d - 1] - roots[0];
    for w in roots.windows(2) {
        if w[1] - w[0] < 1e-10 * span.max(1.0) {
            return Err(Error::IllConditioned(format!(
                "nearly coincident roots {} and {}",
                w[0], w[1]
            )));
        }
    }

    // Weights from the Vandermonde system sum_j w_j y_j^k = m'_k, k < d.
    let vand = DMatrix::from_fn(d, d, |k, j| roots[j].powi(k as i32));
    let sm_head = DVector::from_fn(d, |k, _| sm[k]);
    let mut weights = vand
        .lu()
        .solve(&sm_head)
        .ok_or_else(|| Error::IllConditioned("Vandermonde system is numerically singular".into()))?
        .data
        .as_vec()
        .clone();
    for w in weights.iter_mut() {
        if *w < -WEIGHT_CLAMP_TOL {
            return Err(Error::Infeasible(format!(
                "computed weight {w:e} is negative beyond tolerance"
            )));
        }
        *w = w.max(WEIGHT_CLAMP_TOL);
    }
    let mass: f64 = weights.iter().sum();

    let atoms: Vec<(f64, f64)> = weights
        .iter()
        .zip(&roots)
        .map(|(&w, &y)| (w / mass, c + s * y))
        .collect();
    let bounds = covering_bounds(&atoms.iter().map(|a| a.1).collect::<Vec<_>>());
    let g = MixingDistribution::new(atoms, bounds)?;

    for k in 0..=2 * d - 1 {
        let got = moment(&g, k);
        let want = ms.get(k);
        if (got - want).abs() > ROUND_TRIP_TOL * want.abs().max(1.0) {
            return Err(Error::IllConditioned(format!(
                "reconstructed measure misses moment {k}: {got} vs {want}"
            )));
        }
    }
    Ok(g)
}

fn covering_bounds(locations: &[f64]) -> (f64, f64) {
    let mut lo = DEFAULT_THETA_BOUNDS.0;
    let mut hi = DEFAULT_THETA_BOUNDS.1;
    for &t in locations {
        lo = lo.min(t - 1.0);
        hi = hi.max(t + 1.0);
    }
    (lo, hi)
}

/// Moment map: the first 2d-1 raw moments of a d-atom measure (plus m_0).
/// Left inverse of [`solve_moment_problem`] on its range.
pub fn phi_map(g: &MixingDistribution) -> MomentSequence {
    let d = g.num_atoms();
    let values = (0..2 * d).map(|k| moment(g, k)).collect();
    MomentSequence::new(values).expect("moments of a probability measure start at 1")
}

/// Closed-form Jacobian determinant of the moment map at `g`:
/// `(-1)^{d(d-1)/2} * w_1...w_d * prod_{j<k} (theta_j - theta_k)^4`.
pub fn phi_jacobian_det(g: &MixingDistribution) -> f64 {
    let atoms = g.atoms();
    let d = atoms.len();
    let sign = if (d * (d - 1) / 2).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    let mut out = sign;
    for a in atoms {
        out *= a.weight;
    }
    for j in 0..d {
        for k in (j + 1)..d {
            out *= (atoms[j].location - atoms[k].location).powi(4);
        }
    }
    out
}
