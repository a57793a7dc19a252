//! Small derivative-free optimizers used by the estimator and the
//! identifiability margin search: a bounded-budget Nelder-Mead simplex and a
//! golden-section line maximizer.

/// Options for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NmOptions {
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Stop when the simplex function values spread less than
    /// `f_tol * (1 + |f_best|)`.
    pub f_tol: f64,
    /// Stop when the simplex collapses below this coordinate spread.
    pub x_tol: f64,
    /// Initial step used to build the simplex around the start point.
    pub init_step: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-12,
            x_tol: 1e-10,
            init_step: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
}

/// Nelder-Mead simplex minimization with standard coefficients
/// (reflect 1, expand 2, contract 1/2, shrink 1/2).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NmOptions) -> NmResult {
    let dim = x0.len();
    assert!(dim >= 1, "need at least one coordinate");
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let fx0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), fx0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        let step = if x[i].abs() > 1.0 {
            opts.init_step * x[i].abs()
        } else {
            opts.init_step
        };
        x[i] += step;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread_f = (worst - best).abs();
        let spread_x = (0..dim)
            .map(|i| {
                let lo = simplex.iter().map(|s| s.0[i]).fold(f64::INFINITY, f64::min);
                let hi = simplex
                    .iter()
                    .map(|s| s.0[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0_f64, f64::max);
        if spread_f <= opts.f_tol * (1.0 + best.abs()) && spread_x <= opts.x_tol {
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|i| simplex[..dim].iter().map(|s| s.0[i]).sum::<f64>() / dim as f64)
            .collect();
        let second_worst = simplex[dim - 1].1;

        let reflect: Vec<f64> = (0..dim)
            .map(|i| centroid[i] + (centroid[i] - simplex[dim].0[i]))
            .collect();
        let fr = eval(&reflect, &mut evals);

        if fr < simplex[0].1 {
            let expand: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + 2.0 * (centroid[i] - simplex[dim].0[i]))
                .collect();
            let fe = eval(&expand, &mut evals);
            simplex[dim] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < second_worst {
            simplex[dim] = (reflect, fr);
        } else {
            let outside = fr < simplex[dim].1;
            let anchor = if outside { &reflect } else { &simplex[dim].0 };
            let contract: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + 0.5 * (anchor[i] - centroid[i]))
                .collect();
            let fc = eval(&contract, &mut evals);
            if fc < simplex[dim].1.min(fr) {
                simplex[dim] = (contract, fc);
            } else {
                // Shrink toward the best vertex.
                let best_x = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    for (xi, &bi) in s.0.iter_mut().zip(&best_x) {
                        *xi = bi + 0.5 * (*xi - bi);
                    }
                    s.1 = eval(&s.0.clone(), &mut evals);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    NmResult { x, fx, evals }
}

/// Golden-section search for the maximum of a locally unimodal function on
/// [a, b].
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    x_tol: f64,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.6180339887498949;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > x_tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_shifted_quadratic() {
        let r = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &NmOptions::default(),
        );
        assert!((r.x[0] - 3.0).abs() < 1e-4, "{:?}", r.x);
        assert!((r.x[1] + 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn minimizes_one_dimensional() {
        let r = nelder_mead(|x| (x[0] - 0.7).powi(2), &[5.0], &NmOptions::default());
        assert!((r.x[0] - 0.7).abs() < 1e-5);
    }

    #[test]
    fn rosenbrock_reaches_valley() {
        let opts = NmOptions {
            max_evals: 4000,
            ..NmOptions::default()
        };
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &opts,
        );
        assert!(r.fx < 1e-6, "fx = {}", r.fx);
    }

    #[test]
    fn respects_eval_budget() {
        let mut count = 0;
        let opts = NmOptions {
            max_evals: 50,
            ..NmOptions::default()
        };
        let _ = nelder_mead(
            |x| {
                count += 1;
                x.iter().map(|v| v * v).sum()
            },
            &[1.0, 1.0, 1.0],
            &opts,
        );
        assert!(count <= 55, "evaluated {count} times");
    }

    #[test]
    fn golden_section_finds_peak() {
        let (x, fx) = golden_section_max(|x| -(x - 1.3).powi(2) + 2.0, 0.0, 4.0, 1e-9);
        assert!((x - 1.3).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-12);
    }
}
