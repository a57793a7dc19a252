//! Finite atomic measures on a compact interval and the L1-Wasserstein metric.
//!
//! A [`MixingDistribution`] is a probability measure `sum_j w_j * delta(theta_j)`
//! with finitely many atoms inside a parameter interval. The W1 distance between
//! two such measures is computed exactly as the integral of the absolute CDF
//! difference, which for atomic measures is a finite sum over the merged sorted
//! atom locations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atoms closer than this are considered the same location and merged
/// at construction.
pub const MERGE_EPS: f64 = 1e-12;

/// Tolerance on the total mass of a probability measure at construction.
pub const MASS_TOL: f64 = 1e-12;

/// Looser mass tolerance applied when loading measures from files.
pub const LOAD_MASS_TOL: f64 = 1e-9;

/// Largest moment order served by [`moment`].
pub const MAX_MOMENT_ORDER: usize = 20;

/// Default compact parameter interval used by built-in instances.
pub const DEFAULT_THETA_BOUNDS: (f64, f64) = (-10.0, 10.0);

/// A weighted atom of a (possibly signed) measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Weight; strictly positive for probability measures, any sign for
    /// signed measures.
    pub weight: f64,
    /// Location on the real line.
    pub location: f64,
}

/// A finite atomic probability measure on a compact interval.
///
/// Invariants, enforced at construction:
/// - weights are strictly positive and sum to 1 within [`MASS_TOL`];
/// - locations are sorted strictly increasing (near-coincident atoms merged);
/// - every location lies inside the parameter interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingDistribution {
    atoms: Vec<Atom>,
    theta_lo: f64,
    theta_hi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixingDistributionJson {
    atoms: Vec<AtomJson>,
    theta_lo: f64,
    theta_hi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomJson {
    w: f64,
    theta: f64,
}

impl MixingDistribution {
    /// Builds a measure from `(weight, location)` pairs over the interval
    /// `bounds`. Atoms closer than [`MERGE_EPS`] are merged by summing
    /// weights; the merged location is the weighted mean.
    pub fn new(atoms: Vec<(f64, f64)>, bounds: (f64, f64)) -> Result<Self> {
        let (lo, hi) = bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "theta bounds must be finite with lo < hi, got ({lo}, {hi})"
            )));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidArgument(
                "measure needs at least one atom".into(),
            ));
        }
        for (i, &(w, t)) in atoms.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "atom {i} has non-positive weight {w}"
                )));
            }
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "atom {i} has non-finite location"
                )));
            }
            if t < lo || t > hi {
                return Err(Error::InvalidArgument(format!(
                    "atom {i} at theta={t} lies outside [{lo}, {hi}]"
                )));
            }
        }
        let mass: f64 = atoms.iter().map(|&(w, _)| w).sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {mass}, residual {:e} exceeds {MASS_TOL:e}",
                mass - 1.0
            )));
        }

        let mut sorted = atoms;
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut merged: Vec<Atom> = Vec::with_capacity(sorted.len());
        for (w, t) in sorted {
            match merged.last_mut() {
                Some(last) if (t - last.location).abs() < MERGE_EPS => {
                    let total = last.weight + w;
                    last.location = (last.location * last.weight + t * w) / total;
                    last.weight = total;
                }
                _ => merged.push(Atom {
                    weight: w,
                    location: t,
                }),
            }
        }
        Ok(Self {
            atoms: merged,
            theta_lo: lo,
            theta_hi: hi,
        })
    }

    /// Point mass at `location`.
    pub fn dirac(location: f64, bounds: (f64, f64)) -> Result<Self> {
        Self::new(vec![(1.0, location)], bounds)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn theta_bounds(&self) -> (f64, f64) {
        (self.theta_lo, self.theta_hi)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.weight)
    }

    pub fn locations(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.location)
    }

    /// Parses the JSON interchange form and canonicalizes the result.
    /// Weights must sum to 1 within [`LOAD_MASS_TOL`]; they are renormalized
    /// so the in-memory invariant holds exactly.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MixingDistributionJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("bad mixing distribution JSON: {e}")))?;
        let mass: f64 = raw.atoms.iter().map(|a| a.w).sum();
        if (mass - 1.0).abs() > LOAD_MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {mass}, residual {:e} exceeds load tolerance {LOAD_MASS_TOL:e}",
                mass - 1.0
            )));
        }
        let atoms = raw.atoms.iter().map(|a| (a.w / mass, a.theta)).collect();
        Self::new(atoms, (raw.theta_lo, raw.theta_hi))
    }

    pub fn to_json(&self) -> String {
        let raw = MixingDistributionJson {
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomJson {
                    w: a.weight,
                    theta: a.location,
                })
                .collect(),
            theta_lo: self.theta_lo,
            theta_hi: self.theta_hi,
        };
        serde_json::to_string(&raw).expect("serializing plain floats cannot fail")
    }
}

impl Serialize for MixingDistribution {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = MixingDistributionJson {
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomJson {
                    w: a.weight,
                    theta: a.location,
                })
                .collect(),
            theta_lo: self.theta_lo,
            theta_hi: self.theta_hi,
        };
        raw.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for MixingDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = MixingDistributionJson::deserialize(de)?;
        let mass: f64 = raw.atoms.iter().map(|a| a.w).sum();
        if (mass - 1.0).abs() > LOAD_MASS_TOL {
            return Err(serde::de::Error::custom(format!(
                "weights sum to {mass}, residual {:e} exceeds load tolerance",
                mass - 1.0
            )));
        }
        let atoms = raw.atoms.iter().map(|a| (a.w / mass, a.theta)).collect();
        Self::new(atoms, (raw.theta_lo, raw.theta_hi)).map_err(serde::de::Error::custom)
    }
}

/// A finite signed atomic measure, typically a difference of two mixing
/// distributions. Atom order is preserved so indices stay meaningful
/// across a family of such differences.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedAtomicMeasure {
    atoms: Vec<Atom>,
}

impl SignedAtomicMeasure {
    /// The signed measure `g1 - g2`. Atoms of `g1` come first with positive
    /// weights, then atoms of `g2` with negated weights; nothing is merged.
    pub fn difference(g1: &MixingDistribution, g2: &MixingDistribution) -> Self {
        let mut atoms: Vec<Atom> = g1.atoms().to_vec();
        atoms.extend(g2.atoms().iter().map(|a| Atom {
            weight: -a.weight,
            location: a.location,
        }));
        Self { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }
}

/// Exact L1-Wasserstein distance between two atomic probability measures:
/// the integral over the line of the absolute CDF difference, evaluated as
/// a finite sum over the merged sorted atom locations.
pub fn wasserstein_w1(g1: &MixingDistribution, g2: &MixingDistribution) -> f64 {
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(g1.num_atoms() + g2.num_atoms());
    events.extend(g1.atoms().iter().map(|a| (a.location, a.weight)));
    events.extend(g2.atoms().iter().map(|a| (a.location, -a.weight)));
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut total = 0.0;
    let mut cdf_gap = 0.0;
    for w in events.windows(2) {
        cdf_gap += w[0].1;
        total += cdf_gap.abs() * (w[1].0 - w[0].0);
    }
    total
}

/// Kantorovich-Rubinstein lower bound on W1 from piecewise-linear 1-Lipschitz
/// test functions whose slopes are +-1 and change only at `test_points`.
///
/// Writing M(t) for the CDF difference, integration by parts gives
/// `int f d(G1-G2) = -int f'(t) M(t) dt`, and the best slope pattern picks
/// `f' = -sign(int_segment M)` on each segment. The bound therefore equals
/// the sum over segments of `|int_segment M|`, which is at most
/// `int |M| = W1`, with equality when the segments never straddle a sign
/// change of M.
pub fn wasserstein_dual_lb(
    g1: &MixingDistribution,
    g2: &MixingDistribution,
    test_points: &[f64],
) -> Result<f64> {
    if test_points.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one test point".into(),
        ));
    }
    let mut cuts = test_points.to_vec();
    cuts.sort_by(f64::total_cmp);

    let mut events: Vec<(f64, f64)> = Vec::with_capacity(g1.num_atoms() + g2.num_atoms());
    events.extend(g1.atoms().iter().map(|a| (a.location, a.weight)));
    events.extend(g2.atoms().iter().map(|a| (a.location, -a.weight)));
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Walk the piecewise-constant M(t) over atom intervals, splitting at the
    // cut points and accumulating the signed area per segment. A cut at or
    // before the current interval closes the running segment.
    let mut bound = 0.0;
    let mut segment_area = 0.0_f64;
    let mut cut_idx = 0;
    let mut cdf_gap = 0.0;
    for w in events.windows(2) {
        cdf_gap += w[0].1;
        let (mut left, right) = (w[0].0, w[1].0);
        while cut_idx < cuts.len() && cuts[cut_idx] <= left {
            bound += segment_area.abs();
            segment_area = 0.0;
            cut_idx += 1;
        }
        while cut_idx < cuts.len() && cuts[cut_idx] < right {
            segment_area += cdf_gap * (cuts[cut_idx] - left);
            bound += segment_area.abs();
            segment_area = 0.0;
            left = cuts[cut_idx];
            cut_idx += 1;
        }
        segment_area += cdf_gap * (right - left);
    }
    bound += segment_area.abs();
    Ok(bound)
}

/// k-th raw moment `sum_j w_j theta_j^k`. The 0-th moment is the total mass,
/// which the type guarantees, so it is returned as exactly 1.
///
/// Panics if `k` exceeds [`MAX_MOMENT_ORDER`]; higher orders are outside the
/// library's supported range.
pub fn moment(g: &MixingDistribution, k: usize) -> f64 {
    assert!(
        k <= MAX_MOMENT_ORDER,
        "moment order {k} exceeds {MAX_MOMENT_ORDER}"
    );
    if k == 0 {
        return 1.0;
    }
    g.atoms()
        .iter()
        .map(|a| a.weight * a.location.powi(k as i32))
        .sum()
}

/// Maps every atom location through `theta -> center + scale * (theta - center)`,
/// keeping weights. Satisfies `W(H(g1), H(g2)) = scale * W(g1, g2)` exactly.
pub fn homothety(g: &MixingDistribution, center: f64, scale: f64) -> Result<MixingDistribution> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let (lo, hi) = g.theta_bounds();
    let mut atoms = Vec::with_capacity(g.num_atoms());
    for (i, a) in g.atoms().iter().enumerate() {
        let t = center + scale * (a.location - center);
        if t < lo || t > hi {
            return Err(Error::Domain(format!(
                "homothety sends atom {i} (theta={}) to {t}, outside [{lo}, {hi}]",
                a.location
            )));
        }
        atoms.push((a.weight, t));
    }
    MixingDistribution::new(atoms, (lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk(atoms: &[(f64, f64)]) -> MixingDistribution {
        MixingDistribution::new(atoms.to_vec(), DEFAULT_THETA_BOUNDS).unwrap()
    }

    /// Riemann-sum oracle for the CDF-difference integral, independent of the
    /// event-walk implementation.
    fn w1_riemann(g1: &MixingDistribution, g2: &MixingDistribution, steps: usize) -> f64 {
        let lo = -6.0;
        let hi = 6.0;
        let h = (hi - lo) / steps as f64;
        let cdf = |g: &MixingDistribution, t: f64| -> f64 {
            g.atoms()
                .iter()
                .filter(|a| a.location <= t)
                .map(|a| a.weight)
                .sum()
        };
        (0..steps)
            .map(|i| {
                let t = lo + (i as f64 + 0.5) * h;
                (cdf(g1, t) - cdf(g2, t)).abs() * h
            })
            .sum()
    }

    #[test]
    fn w1_identical_diracs_is_zero() {
        let g = mk(&[(1.0, 0.0)]);
        assert_eq!(wasserstein_w1(&g, &g), 0.0);
    }

    #[test]
    fn w1_unit_transport() {
        let a = mk(&[(1.0, 0.0)]);
        let b = mk(&[(1.0, 1.0)]);
        assert!((wasserstein_w1(&a, &b) - 1.0).abs() < 1e-15);
        assert!((wasserstein_w1(&b, &a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w1_worked_pair_is_1_8() {
        // Segments (-2,-1), (-1,2), (2,4) contribute 0.5*1 + 0.3*3 + 0.2*2.
        let a = mk(&[(0.5, -2.0), (0.5, 2.0)]);
        let b = mk(&[(0.8, -1.0), (0.2, 4.0)]);
        let w = wasserstein_w1(&a, &b);
        assert!((w - 1.8).abs() < 1e-12, "got {w}");
        assert!((w - w1_riemann(&a, &b, 1_200_000)).abs() < 1e-4);
    }

    #[test]
    fn dual_zero_for_equal_measures() {
        let g = mk(&[(1.0, 0.0)]);
        assert_eq!(wasserstein_dual_lb(&g, &g, &[0.0, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn dual_attains_primal_on_diracs() {
        let a = mk(&[(1.0, 0.0)]);
        let b = mk(&[(1.0, 1.0)]);
        let d = wasserstein_dual_lb(&a, &b, &[0.0, 1.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dual_attains_primal_with_kinks_at_atoms() {
        let a = mk(&[(0.5, -2.0), (0.5, 2.0)]);
        let b = mk(&[(0.8, -1.0), (0.2, 4.0)]);
        let d = wasserstein_dual_lb(&a, &b, &[-2.0, -1.0, 2.0, 4.0]).unwrap();
        assert!((d - 1.8).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn dual_is_a_lower_bound_with_sparse_kinks() {
        let a = mk(&[(0.5, -2.0), (0.5, 2.0)]);
        let b = mk(&[(0.8, -1.0), (0.2, 4.0)]);
        let d = wasserstein_dual_lb(&a, &b, &[0.0]).unwrap();
        assert!(d <= 1.8 + 1e-12);
        assert!(d > 0.0);
    }

    #[test]
    fn dual_needs_a_test_point() {
        let g = mk(&[(1.0, 0.0)]);
        assert!(matches!(
            wasserstein_dual_lb(&g, &g, &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn moments_of_worked_measures() {
        let c = 1.37;
        assert!((moment(&mk(&[(1.0, c)]), 1) - c).abs() < 1e-15);
        let b = mk(&[(0.8, -1.0), (0.2, 4.0)]);
        assert!((moment(&b, 2) - 4.0).abs() < 1e-12);
        assert!((moment(&b, 3) - 12.0).abs() < 1e-12);
        let a = mk(&[(0.5, -2.0), (0.5, 2.0)]);
        assert!(moment(&a, 3).abs() < 1e-12);
        assert_eq!(moment(&a, 0), 1.0);
    }

    #[test]
    fn homothety_identity_and_contraction() {
        let g = mk(&[(0.3, -1.0), (0.7, 2.0)]);
        let same = homothety(&g, 0.5, 1.0).unwrap();
        assert_eq!(g, same);

        let d1 = mk(&[(1.0, 1.0)]);
        let half = homothety(&d1, 0.0, 0.5).unwrap();
        assert_eq!(half.atoms().len(), 1);
        assert!((half.atoms()[0].location - 0.5).abs() < 1e-15);
    }

    #[test]
    fn homothety_scales_w1_exactly() {
        let a = mk(&[(0.5, -2.0), (0.5, 2.0)]);
        let b = mk(&[(0.8, -1.0), (0.2, 4.0)]);
        let s = 0.37;
        let ha = homothety(&a, 0.0, s).unwrap();
        let hb = homothety(&b, 0.0, s).unwrap();
        assert!((wasserstein_w1(&ha, &hb) - s * 1.8).abs() < 1e-12);
    }

    #[test]
    fn homothety_reports_escaping_atom() {
        let g = MixingDistribution::new(vec![(1.0, 0.9)], (-1.0, 1.0)).unwrap();
        let err = homothety(&g, 0.0, 1.5).unwrap_err();
        match err {
            Error::Domain(msg) => assert!(msg.contains("atom 0"), "{msg}"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn construction_merges_coincident_atoms() {
        let g = mk(&[(0.25, 1.0), (0.25, 1.0 + 1e-14), (0.5, 2.0)]);
        assert_eq!(g.num_atoms(), 2);
        assert!((g.atoms()[0].weight - 0.5).abs() < 1e-15);
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(MixingDistribution::new(vec![], DEFAULT_THETA_BOUNDS).is_err());
        assert!(MixingDistribution::new(vec![(0.0, 0.0)], DEFAULT_THETA_BOUNDS).is_err());
        assert!(MixingDistribution::new(vec![(0.5, 0.0)], DEFAULT_THETA_BOUNDS).is_err());
        assert!(MixingDistribution::new(vec![(1.0, 11.0)], DEFAULT_THETA_BOUNDS).is_err());
    }

    #[test]
    fn signed_difference_has_zero_mass_and_stable_indexing() {
        let a = mk(&[(0.5, -2.0), (0.5, 2.0)]);
        let b = mk(&[(0.8, -1.0), (0.2, 4.0)]);
        let d = SignedAtomicMeasure::difference(&a, &b);
        assert!(d.total_mass().abs() < MASS_TOL);
        assert_eq!(d.atoms().len(), 4);
        assert_eq!(d.atoms()[0].location, -2.0);
        assert_eq!(d.atoms()[2].weight, -0.8);
    }

    #[test]
    fn json_round_trip_is_canonical_and_idempotent() {
        let g = mk(&[(0.8, -1.0), (0.2, 4.0)]);
        let s1 = g.to_json();
        let g2 = MixingDistribution::from_json(&s1).unwrap();
        assert_eq!(g, g2);
        assert_eq!(s1, g2.to_json());
    }

    #[test]
    fn json_load_rejects_bad_mass() {
        let text = r#"{"atoms":[{"w":0.5,"theta":0.0},{"w":0.4,"theta":1.0}],"theta_lo":-10.0,"theta_hi":10.0}"#;
        let err = MixingDistribution::from_json(text).unwrap_err();
        match err {
            Error::InvalidArgument(msg) => assert!(msg.contains("residual"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn json_load_renormalizes_within_tolerance() {
        let text = r#"{"atoms":[{"w":0.5000000001,"theta":0.0},{"w":0.5,"theta":1.0}],"theta_lo":-10.0,"theta_hi":10.0}"#;
        let g = MixingDistribution::from_json(text).unwrap();
        let mass: f64 = g.weights().sum();
        assert!((mass - 1.0).abs() <= MASS_TOL);
    }
}
