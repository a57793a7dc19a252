//! Empirical validation of the coarse-graining scale structure behind the
//! W1 order formula.
//!
//! For a parametric family of measure pairs (G_{1,n}, G_{2,n}) with exact
//! power-law scales, log-log regression recovers the exponent of every
//! inter-atom distance and of every signed weight sum over an atom set.
//! The pairwise exponents form an ultrametric, whose closed balls assemble
//! into a tree; the product `eps_{v(J)} * eps_{s(p(J))}` maximized over the
//! tree's proper descendants reproduces the order of W1(G_{1,n}, G_{2,n}).
//!
//! Scope: generator families with exact power-law scales. Subsequence
//! extraction for general sequences is out of reach of a regression check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hard_instances::{build_gn_at, HardInstanceSpec};
use crate::measures::{
    wasserstein_w1, MixingDistribution, SignedAtomicMeasure, DEFAULT_THETA_BOUNDS,
};

/// Distances identically below this are treated as zero (the bottom scale).
const ZERO_DIST: f64 = 1e-13;

/// Signed weight sums identically below this are the zero-mass sentinel.
const ZERO_MASS: f64 = 1e-12;

type Generator = Box<dyn Fn(u64) -> Result<(MixingDistribution, MixingDistribution)> + Send + Sync>;

/// A family of measure pairs indexed by n, with constant atom counts.
pub struct ScaledPairFamily {
    pub name: String,
    generator: Generator,
    pub n_grid: Vec<u64>,
}

impl ScaledPairFamily {
    pub fn new(name: impl Into<String>, generator: Generator, n_grid: Vec<u64>) -> Result<Self> {
        if n_grid.len() < 4 {
            return Err(Error::InvalidArgument(
                "n grid needs at least 4 values".into(),
            ));
        }
        if n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "n grid must be strictly increasing".into(),
            ));
        }
        let span = n_grid[n_grid.len() - 1] as f64 / n_grid[0] as f64;
        if span < 1e3 {
            return Err(Error::InvalidArgument(format!(
                "n grid must span at least 3 decades, got factor {span}"
            )));
        }
        Ok(Self {
            name: name.into(),
            generator,
            n_grid,
        })
    }

    pub fn generate(&self, n: u64) -> Result<(MixingDistribution, MixingDistribution)> {
        (self.generator)(n)
    }

    /// Geometric default grid 1e2..1e6.
    pub fn default_n_grid() -> Vec<u64> {
        vec![100, 1_000, 10_000, 100_000, 1_000_000]
    }

    /// The worked hard-instance pair (u = 0 against u = 12).
    pub fn worked_example(n_grid: Vec<u64>) -> Result<Self> {
        let spec = HardInstanceSpec::worked_example();
        Self::new(
            "example",
            Box::new(move |n| Ok((build_gn_at(&spec, 0.0, n)?, build_gn_at(&spec, 12.0, n)?))),
            n_grid,
        )
    }

    /// Synthetic family with two coarse clusters 1 apart, each split at the
    /// fine scale n^{-1/4}, and a weight imbalance of the same order on the
    /// fine pairs.
    pub fn three_level(n_grid: Vec<u64>) -> Result<Self> {
        Self::new(
            "three-level",
            Box::new(move |n| {
                let eps = 0.1 * (n as f64).powf(-0.25);
                let g1 =
                    MixingDistribution::new(vec![(0.5, 0.0), (0.5, 1.0)], DEFAULT_THETA_BOUNDS)?;
                let g2 = MixingDistribution::new(
                    vec![(0.5 - eps, eps), (0.5 + eps, 1.0 + eps)],
                    DEFAULT_THETA_BOUNDS,
                )?;
                Ok((g1, g2))
            }),
            n_grid,
        )
    }
}

/// Validation thresholds; both are empirical knobs, not structural constants.
#[derive(Debug, Clone, Serialize)]
pub struct ScwOptions {
    /// A fitted slope snaps to a ladder rational within this distance.
    pub snap_tol: f64,
    /// Two-sided boundedness constant for the lhs/rhs ratio.
    pub bound_factor: f64,
}

impl Default for ScwOptions {
    fn default() -> Self {
        Self {
            snap_tol: 0.02,
            bound_factor: 10.0,
        }
    }
}

/// Fitted scale exponents. `None` encodes the bottom scale (identically
/// zero distance or signed mass).
#[derive(Debug, Clone, Serialize)]
pub struct FittedExponents {
    pub atom_count: usize,
    /// Snapped pairwise exponents a(j, k); symmetric, None on the diagonal.
    pub pairwise: Vec<Vec<Option<f64>>>,
    /// Raw regression slopes before snapping, for diagnostics.
    pub pairwise_raw: Vec<Vec<Option<f64>>>,
    /// Candidate sets: the distinct ultrametric closed balls.
    pub ball_sets: Vec<Vec<usize>>,
    /// Weight exponents b(J) aligned with `ball_sets`.
    pub weight_exponents: Vec<Option<f64>>,
    /// Ladder denominator: slopes snap to rationals p/q with q at most this.
    pub snap_denominator: usize,
}

/// Tree node over atom indices. Parent indexes into the node list.
#[derive(Debug, Clone, Serialize)]
pub struct TreeNode {
    pub indices: Vec<usize>,
    pub parent: Option<usize>,
    pub diameter_exponent: Option<f64>,
    pub weight_exponent: Option<f64>,
}

/// Full report: exponents, tree, and both sides of the order formula per n.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingTreeReport {
    pub instance: String,
    pub n_grid: Vec<u64>,
    pub pairwise_exponents: Vec<Vec<Option<f64>>>,
    pub tree: Vec<TreeNode>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratio_range: (f64, f64),
    pub pass: bool,
}

fn least_squares_slope(ln_n: &[f64], ln_y: &[f64]) -> f64 {
    let k = ln_n.len() as f64;
    let mx = ln_n.iter().sum::<f64>() / k;
    let my = ln_y.iter().sum::<f64>() / k;
    let sxy: f64 = ln_n
        .iter()
        .zip(ln_y)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let sxx: f64 = ln_n.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Nearest rational p/q with q <= max_den, if within tol; otherwise the raw
/// slope is kept.
fn snap_slope(slope: f64, max_den: usize, tol: f64) -> f64 {
    let mut best = slope;
    let mut best_dist = tol;
    for q in 1..=max_den {
        let p = (slope * q as f64).round();
        let cand = p / q as f64;
        let dist = (slope - cand).abs();
        if dist < best_dist {
            best_dist = dist;
            best = cand;
        }
    }
    best
}

fn fit_series(
    ln_n: &[f64],
    values: &[f64],
    what: &str,
    zero: f64,
    max_den: usize,
    tol: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    let nonzero = values.iter().filter(|v| v.abs() > zero).count();
    if nonzero == 0 {
        return Ok((None, None));
    }
    if nonzero < values.len() {
        return Err(Error::Diagnostic(format!(
            "{what} vanishes at some grid points but not others; no single scale fits"
        )));
    }
    if values.len() < 3 {
        return Err(Error::Diagnostic(format!(
            "{what}: fewer than 3 usable regression points"
        )));
    }
    let ln_y: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let raw = least_squares_slope(ln_n, &ln_y);
    Ok((Some(snap_slope(raw, max_den, tol)), Some(raw)))
}

/// Regression of every pairwise atom distance and every candidate-ball
/// signed weight sum against n.
pub fn fit_exponents(fam: &ScaledPairFamily, opts: &ScwOptions) -> Result<FittedExponents> {
    let mut locs: Vec<Vec<f64>> = Vec::with_capacity(fam.n_grid.len());
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(fam.n_grid.len());
    let mut sides = (0, 0);
    for &n in &fam.n_grid {
        let (g1, g2) = fam.generate(n)?;
        if locs.is_empty() {
            sides = (g1.num_atoms(), g2.num_atoms());
        } else if (g1.num_atoms(), g2.num_atoms()) != sides {
            return Err(Error::Diagnostic(format!(
                "atom counts change across the grid: ({}, {}) vs {:?}",
                g1.num_atoms(),
                g2.num_atoms(),
                sides
            )));
        }
        let signed = SignedAtomicMeasure::difference(&g1, &g2);
        locs.push(signed.atoms().iter().map(|a| a.location).collect());
        weights.push(signed.atoms().iter().map(|a| a.weight).collect());
    }
    let count = sides.0 + sides.1;
    let max_den = 4 * sides.0.max(sides.1) - 2;
    let ln_n: Vec<f64> = fam.n_grid.iter().map(|&n| (n as f64).ln()).collect();

    let mut pairwise = vec![vec![None; count]; count];
    let mut pairwise_raw = vec![vec![None; count]; count];
    for j in 0..count {
        for k in (j + 1)..count {
            let dists: Vec<f64> = locs.iter().map(|l| l[j] - l[k]).collect();
            let (snapped, raw) = fit_series(
                &ln_n,
                &dists,
                &format!("distance between atoms {j} and {k}"),
                ZERO_DIST,
                max_den,
                opts.snap_tol,
            )?;
            pairwise[j][k] = snapped;
            pairwise[k][j] = snapped;
            pairwise_raw[j][k] = raw;
            pairwise_raw[k][j] = raw;
        }
    }

    check_ultrametric(&pairwise)?;

    let ball_sets = ultrametric_balls(&pairwise);
    let mut weight_exponents = Vec::with_capacity(ball_sets.len());
    for ball in &ball_sets {
        let sums: Vec<f64> = weights
            .iter()
            .map(|w| ball.iter().map(|&j| w[j]).sum::<f64>())
            .collect();
        let (snapped, _) = fit_series(
            &ln_n,
            &sums,
            &format!("signed weight of {ball:?}"),
            ZERO_MASS,
            max_den,
            opts.snap_tol,
        )?;
        weight_exponents.push(snapped);
    }

    Ok(FittedExponents {
        atom_count: count,
        pairwise,
        pairwise_raw,
        ball_sets,
        weight_exponents,
        snap_denominator: max_den,
    })
}

fn level_le(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(x), Some(y)) => x <= y + 1e-9,
    }
}

fn check_ultrametric(pairwise: &[Vec<Option<f64>>]) -> Result<()> {
    let count = pairwise.len();
    for i in 0..count {
        for j in 0..count {
            for k in 0..count {
                if i == j || j == k || i == k {
                    continue;
                }
                let through = match (pairwise[i][j], pairwise[j][k]) {
                    (None, o) | (o, None) => o,
                    (Some(a), Some(b)) => Some(a.max(b)),
                };
                if !level_le(pairwise[i][k], through) {
                    return Err(Error::Diagnostic(format!(
                        "exponents are not ultrametric on the triple ({i}, {j}, {k}): \
                         a({i},{k}) = {:?} exceeds max(a({i},{j}), a({j},{k})) = {:?}",
                        pairwise[i][k], through
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Distinct closed balls {k : a(j,k) <= level} over all centers and levels,
/// sorted by size then lexicographically.
fn ultrametric_balls(pairwise: &[Vec<Option<f64>>]) -> Vec<Vec<usize>> {
    let count = pairwise.len();
    let mut levels: Vec<Option<f64>> = vec![None];
    for row in pairwise {
        for &e in row {
            if let Some(v) = e {
                if !levels
                    .iter()
                    .any(|l| matches!(l, Some(x) if (x - v).abs() < 1e-9))
                {
                    levels.push(Some(v));
                }
            }
        }
    }
    let mut balls: Vec<Vec<usize>> = Vec::new();
    for (j, row) in pairwise.iter().enumerate() {
        for level in &levels {
            let ball: Vec<usize> = (0..count)
                .filter(|&k| k == j || level_le(row[k], *level))
                .collect();
            if !balls.contains(&ball) {
                balls.push(ball);
            }
        }
    }
    balls.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    balls
}

/// Assembles the ball sets into a tree (parent = smallest strict superset).
pub fn build_tree(exp: &FittedExponents) -> Result<Vec<TreeNode>> {
    check_ultrametric(&exp.pairwise)?;
    let balls = &exp.ball_sets;
    for (i, a) in balls.iter().enumerate() {
        for b in balls.iter().skip(i + 1) {
            let inter = a.iter().filter(|x| b.contains(x)).count();
            let nested = inter == 0 || inter == a.len().min(b.len());
            if !nested {
                return Err(Error::Diagnostic(format!(
                    "balls {a:?} and {b:?} overlap without nesting"
                )));
            }
        }
    }
    let mut nodes = Vec::with_capacity(balls.len());
    for (i, ball) in balls.iter().enumerate() {
        let parent = balls
            .iter()
            .enumerate()
            .filter(|(_, other)| other.len() > ball.len() && ball.iter().all(|x| other.contains(x)))
            .min_by_key(|(_, other)| other.len())
            .map(|(idx, _)| idx);
        let diameter = ball
            .iter()
            .flat_map(|&j| ball.iter().map(move |&k| (j, k)))
            .filter(|(j, k)| j < k)
            .filter_map(|(j, k)| exp.pairwise[j][k])
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            });
        nodes.push(TreeNode {
            indices: ball.clone(),
            parent,
            diameter_exponent: diameter,
            weight_exponent: exp.weight_exponents[i],
        });
    }
    // The largest ball is the root and must cover everything.
    let root = nodes
        .last()
        .ok_or_else(|| Error::Diagnostic("no balls".into()))?;
    if root.indices.len() != exp.atom_count {
        return Err(Error::Diagnostic(
            "largest ball does not cover all atoms".into(),
        ));
    }
    Ok(nodes)
}

fn eps_at(exponent: Option<f64>, n: u64) -> f64 {
    match exponent {
        None => 0.0,
        Some(e) => (n as f64).powf(e),
    }
}

/// Compares W1(G_{1,n}, G_{2,n}) against the tree's rescaled order formula
/// across the grid. PASS means the ratio stays within the two-sided bound.
pub fn check_scw(fam: &ScaledPairFamily, opts: &ScwOptions) -> Result<ScalingTreeReport> {
    let exp = fit_exponents(fam, opts)?;
    let tree = build_tree(&exp)?;
    let root_idx = tree.len() - 1;

    let mut lhs = Vec::with_capacity(fam.n_grid.len());
    let mut rhs = Vec::with_capacity(fam.n_grid.len());
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = 0.0_f64;
    for &n in &fam.n_grid {
        let (g1, g2) = fam.generate(n)?;
        let w = wasserstein_w1(&g1, &g2);
        let mut order = 0.0_f64;
        for (i, node) in tree.iter().enumerate() {
            if i == root_idx {
                continue;
            }
            let parent = node.parent.expect("non-root node has a parent");
            let term = eps_at(node.weight_exponent, n) * eps_at(tree[parent].diameter_exponent, n);
            order = order.max(term);
        }
        if order == 0.0 {
            return Err(Error::Diagnostic(
                "order formula degenerates to zero on the whole tree".into(),
            ));
        }
        let ratio = w / order;
        ratio_min = ratio_min.min(ratio);
        ratio_max = ratio_max.max(ratio);
        lhs.push(w);
        rhs.push(order);
    }
    let pass = ratio_max <= opts.bound_factor && ratio_min >= 1.0 / opts.bound_factor;
    Ok(ScalingTreeReport {
        instance: fam.name.clone(),
        n_grid: fam.n_grid.clone(),
        pairwise_exponents: exp.pairwise,
        tree,
        lhs,
        rhs,
        ratio_range: (ratio_min, ratio_max),
        pass,
    })
}
