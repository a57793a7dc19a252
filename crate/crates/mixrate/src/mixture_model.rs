//! Component kernels and mixture evaluation.
//!
//! A [`ComponentFamily`] supplies the component CDF and density together with
//! their derivatives in the location parameter, up to a declared order. The
//! mixture observable under a mixing distribution G is then
//! `F(x, G) = sum_j w_j F(x, theta_j)` and likewise for the density.
//!
//! Only the Gaussian location family ships built in. Its theta-derivatives
//! are closed forms through probabilists' Hermite polynomials, which keeps
//! orders up to 8 at full precision where nested finite differences would
//! not survive.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::measures::MixingDistribution;

const INV_SQRT_2PI: f64 = 0.3989422804014327;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// A parametric family of component distributions indexed by a scalar
/// location-like parameter theta on a compact interval.
pub trait ComponentFamily: Sync {
    /// Component CDF F(x, theta).
    fn cdf(&self, x: f64, theta: f64) -> f64;

    /// Component density f(x, theta).
    fn pdf(&self, x: f64, theta: f64) -> f64;

    /// p-th derivative of the CDF in theta; p = 0 recovers the CDF.
    fn cdf_theta_deriv(&self, p: usize, x: f64, theta: f64) -> f64;

    /// p-th derivative of the density in theta; p = 0 recovers the density.
    fn pdf_theta_deriv(&self, p: usize, x: f64, theta: f64) -> f64;

    /// Largest derivative order the family promises to evaluate accurately.
    fn max_order(&self) -> usize;

    /// The compact parameter interval.
    fn theta_bounds(&self) -> (f64, f64);

    /// One draw from the component with parameter theta.
    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64;

    /// Half-width of the x-region where the component puts essentially all
    /// of its mass around theta. Used to size evaluation grids.
    fn x_margin(&self) -> f64 {
        8.0
    }

    /// Central moment `E[(X - theta)^order]` when it does not depend on
    /// theta (location families). `None` disables moment-based initializers.
    fn location_noise_moment(&self, _order: usize) -> Option<f64> {
        None
    }
}

/// Gaussian location family: `F(x, theta) = Phi((x - theta) / sigma)` with a
/// fixed scale sigma.
///
/// Derivatives in theta are Hermite closed forms. With `z = (x - theta)/sigma`
/// and `He_k` the probabilists' Hermite polynomials,
/// `d^p/dtheta^p f = He_p(z) phi(z) / sigma^{p+1}` and
/// `d^p/dtheta^p F = -He_{p-1}(z) phi(z) / sigma^p` for p >= 1.
#[derive(Debug, Clone)]
pub struct GaussianLocationFamily {
    sigma: f64,
    max_order: usize,
    theta_lo: f64,
    theta_hi: f64,
}

impl GaussianLocationFamily {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            sigma,
            max_order: 8,
            theta_lo: crate::measures::DEFAULT_THETA_BOUNDS.0,
            theta_hi: crate::measures::DEFAULT_THETA_BOUNDS.1,
        })
    }

    /// Standard family: sigma = 1, theta in [-10, 10], max order 8.
    pub fn standard() -> Self {
        Self::new(1.0).expect("sigma = 1 is valid")
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "bad theta bounds ({lo}, {hi})"
            )));
        }
        self.theta_lo = lo;
        self.theta_hi = hi;
        Ok(self)
    }

    pub fn with_max_order(mut self, order: usize) -> Self {
        self.max_order = order;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Probabilists' Hermite polynomial He_k(z).
fn hermite(k: usize, z: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => z,
        _ => {
            let mut prev = 1.0;
            let mut cur = z;
            for j in 1..k {
                let next = z * cur - j as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

impl ComponentFamily for GaussianLocationFamily {
    fn cdf(&self, x: f64, theta: f64) -> f64 {
        std_normal_cdf((x - theta) / self.sigma)
    }

    fn pdf(&self, x: f64, theta: f64) -> f64 {
        std_normal_pdf((x - theta) / self.sigma) / self.sigma
    }

    fn cdf_theta_deriv(&self, p: usize, x: f64, theta: f64) -> f64 {
        if p == 0 {
            return self.cdf(x, theta);
        }
        let z = (x - theta) / self.sigma;
        -hermite(p - 1, z) * std_normal_pdf(z) / self.sigma.powi(p as i32)
    }

    fn pdf_theta_deriv(&self, p: usize, x: f64, theta: f64) -> f64 {
        let z = (x - theta) / self.sigma;
        hermite(p, z) * std_normal_pdf(z) / self.sigma.powi(p as i32 + 1)
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn theta_bounds(&self) -> (f64, f64) {
        (self.theta_lo, self.theta_hi)
    }

    fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        theta + self.sigma * z
    }

    fn x_margin(&self) -> f64 {
        8.0 * self.sigma
    }

    fn location_noise_moment(&self, order: usize) -> Option<f64> {
        if order % 2 == 1 {
            return Some(0.0);
        }
        // sigma^k (k-1)!! for even k.
        let mut out = 1.0;
        let mut j = order as i64 - 1;
        while j > 0 {
            out *= j as f64;
            j -= 2;
        }
        Some(out * self.sigma.powi(order as i32))
    }
}

/// Mixture CDF `F(x, G) = sum_j w_j F(x, theta_j)`.
pub fn mixture_cdf<F: ComponentFamily>(fam: &F, g: &MixingDistribution, x: f64) -> f64 {
    g.atoms()
        .iter()
        .map(|a| a.weight * fam.cdf(x, a.location))
        .sum()
}

/// Mixture density `f(x, G) = sum_j w_j f(x, theta_j)`.
pub fn mixture_pdf<F: ComponentFamily>(fam: &F, g: &MixingDistribution, x: f64) -> f64 {
    g.atoms()
        .iter()
        .map(|a| a.weight * fam.pdf(x, a.location))
        .sum()
}

/// CDF theta-derivatives `F^(0..=p_max)(x, theta)` as a vector.
pub fn cdf_deriv_vector<F: ComponentFamily>(
    fam: &F,
    p_max: usize,
    x: f64,
    theta: f64,
) -> Result<Vec<f64>> {
    if p_max > fam.max_order() {
        return Err(Error::InvalidArgument(format!(
            "derivative order {p_max} exceeds family max order {}",
            fam.max_order()
        )));
    }
    Ok((0..=p_max)
        .map(|p| fam.cdf_theta_deriv(p, x, theta))
        .collect())
}

/// n i.i.d. draws from the mixture `f(., G)`, deterministic given the seed.
pub fn sample<F: ComponentFamily>(
    fam: &F,
    g: &MixingDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with_rng(fam, g, n, &mut rng))
}

/// Sampling on a caller-managed stream; replicate harnesses derive one
/// stream per replicate so schedules can run concurrently.
pub fn sample_with_rng<F: ComponentFamily, R: Rng + ?Sized>(
    fam: &F,
    g: &MixingDistribution,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let atoms = g.atoms();
    let mut cum = Vec::with_capacity(atoms.len());
    let mut acc = 0.0;
    for a in atoms {
        acc += a.weight;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let j = cum.partition_point(|&c| c < u).min(atoms.len() - 1);
            fam.draw(atoms[j].location, rng)
        })
        .collect()
}

/// Registration checks for a component family: CDF shape, density mass, and
/// agreement of each derivative order with a finite difference of the
/// previous one.
pub fn validate_family<F: ComponentFamily>(fam: &F) -> Result<()> {
    let (lo, hi) = fam.theta_bounds();
    let margin = fam.x_margin();
    let thetas = [lo, 0.5 * (lo + hi), hi];

    for &theta in &thetas {
        // CDF limits and monotonicity.
        if fam.cdf(theta - 1.5 * margin, theta) > 1e-8 {
            return Err(Error::Diagnostic(format!(
                "cdf does not vanish left of theta={theta}"
            )));
        }
        if 1.0 - fam.cdf(theta + 1.5 * margin, theta) > 1e-8 {
            return Err(Error::Diagnostic(format!(
                "cdf does not reach 1 right of theta={theta}"
            )));
        }
        let steps = 400;
        let mut prev = -1.0;
        for i in 0..=steps {
            let x = theta - margin + 2.0 * margin * i as f64 / steps as f64;
            let c = fam.cdf(x, theta);
            if c < prev - 1e-12 {
                return Err(Error::Diagnostic(format!(
                    "cdf decreases at x={x}, theta={theta}"
                )));
            }
            prev = c;
        }

        // Density integrates to 1 (Simpson).
        let a = theta - 1.5 * margin;
        let b = theta + 1.5 * margin;
        let n = 2000;
        let h = (b - a) / n as f64;
        let mut integral = fam.pdf(a, theta) + fam.pdf(b, theta);
        for i in 1..n {
            let w = if i % 2 == 0 { 2.0 } else { 4.0 };
            integral += w * fam.pdf(a + i as f64 * h, theta);
        }
        integral *= h / 3.0;
        if (integral - 1.0).abs() > 1e-8 {
            return Err(Error::Diagnostic(format!(
                "pdf mass is {integral} at theta={theta}, expected 1"
            )));
        }

        // cdf_theta_deriv(0) must be the CDF itself.
        if (fam.cdf_theta_deriv(0, theta + 0.3, theta) - fam.cdf(theta + 0.3, theta)).abs() > 1e-12
        {
            return Err(Error::Diagnostic(
                "cdf_theta_deriv(0) differs from cdf".into(),
            ));
        }

        // Each order against a central difference of the previous one.
        let h = 1e-5;
        for p in 1..=fam.max_order() {
            for step in 0..6 {
                let x = theta - 2.5 + step as f64;
                let fd = (fam.cdf_theta_deriv(p - 1, x, theta + h)
                    - fam.cdf_theta_deriv(p - 1, x, theta - h))
                    / (2.0 * h);
                let v = fam.cdf_theta_deriv(p, x, theta);
                if (fd - v).abs() > 1e-5 * v.abs().max(1.0) {
                    return Err(Error::Diagnostic(format!(
                        "order-{p} derivative disagrees with finite difference at x={x}: {v} vs {fd}"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DEFAULT_THETA_BOUNDS;

    fn dirac(t: f64) -> MixingDistribution {
        MixingDistribution::dirac(t, DEFAULT_THETA_BOUNDS).unwrap()
    }

    #[test]
    fn gaussian_family_passes_registration_checks() {
        validate_family(&GaussianLocationFamily::standard()).unwrap();
        validate_family(&GaussianLocationFamily::new(0.5).unwrap()).unwrap();
    }

    #[test]
    fn cdf_symmetry_values() {
        let fam = GaussianLocationFamily::standard();
        assert!((mixture_cdf(&fam, &dirac(0.0), 0.0) - 0.5).abs() < 1e-15);
        let pair =
            MixingDistribution::new(vec![(0.5, -1.0), (0.5, 1.0)], DEFAULT_THETA_BOUNDS).unwrap();
        assert!((mixture_cdf(&fam, &pair, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pdf_values_at_modes() {
        let fam = GaussianLocationFamily::standard();
        assert!((mixture_pdf(&fam, &dirac(0.0), 0.0) - INV_SQRT_2PI).abs() < 1e-15);
        let pair =
            MixingDistribution::new(vec![(0.5, -1.0), (0.5, 1.0)], DEFAULT_THETA_BOUNDS).unwrap();
        let expect = (-0.5f64).exp() * INV_SQRT_2PI;
        assert!((mixture_pdf(&fam, &pair, 0.0) - expect).abs() < 1e-15);
    }

    #[test]
    fn pdf_of_random_mixture_integrates_to_one() {
        let fam = GaussianLocationFamily::standard();
        let g = MixingDistribution::new(
            vec![(0.2, -3.0), (0.5, 0.4), (0.3, 2.2)],
            DEFAULT_THETA_BOUNDS,
        )
        .unwrap();
        let (a, b) = (-3.0 - 10.0, 2.2 + 10.0);
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut integral = mixture_pdf(&fam, &g, a) + mixture_pdf(&fam, &g, b);
        for i in 1..n {
            let w = if i % 2 == 0 { 2.0 } else { 4.0 };
            integral += w * mixture_pdf(&fam, &g, a + i as f64 * h);
        }
        integral *= h / 3.0;
        assert!((integral - 1.0).abs() < 1e-8, "mass {integral}");
    }

    #[test]
    fn derivative_values_at_center() {
        let fam = GaussianLocationFamily::standard();
        let v = cdf_deriv_vector(&fam, 2, 0.0, 0.0).unwrap();
        assert!((v[1] + INV_SQRT_2PI).abs() < 1e-15);
        assert!(v[2].abs() < 1e-15);
    }

    #[test]
    fn third_derivative_matches_finite_difference() {
        let fam = GaussianLocationFamily::standard();
        let (x, theta, h) = (1.0, 0.0, 1e-5);
        let fd = (fam.cdf_theta_deriv(2, x, theta + h) - fam.cdf_theta_deriv(2, x, theta - h))
            / (2.0 * h);
        let v = fam.cdf_theta_deriv(3, x, theta);
        assert!((fd - v).abs() < 1e-5);
    }

    #[test]
    fn deriv_vector_respects_max_order() {
        let fam = GaussianLocationFamily::standard().with_max_order(4);
        assert!(cdf_deriv_vector(&fam, 5, 0.0, 0.0).is_err());
    }

    #[test]
    fn sampling_rejects_empty_and_is_deterministic() {
        let fam = GaussianLocationFamily::standard();
        let g = dirac(0.0);
        assert!(sample(&fam, &g, 0, 1).is_err());
        let a = sample(&fam, &g, 64, 9).unwrap();
        let b = sample(&fam, &g, 64, 9).unwrap();
        assert_eq!(a, b);
        let c = sample(&fam, &g, 64, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_obeys_clt_envelope() {
        let fam = GaussianLocationFamily::standard();
        let n = 100_000;
        let xs = sample(&fam, &dirac(0.0), n, 1234).unwrap();
        let mean: f64 = xs.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn mixture_sampling_hits_component_proportions() {
        let fam = GaussianLocationFamily::standard();
        let g =
            MixingDistribution::new(vec![(0.8, -5.0), (0.2, 5.0)], DEFAULT_THETA_BOUNDS).unwrap();
        let xs = sample(&fam, &g, 20_000, 7).unwrap();
        let frac_low = xs.iter().filter(|&&x| x < 0.0).count() as f64 / xs.len() as f64;
        assert!((frac_low - 0.8).abs() < 0.02, "frac {frac_low}");
    }

    #[test]
    fn noise_moments_are_gaussian() {
        let fam = GaussianLocationFamily::new(2.0).unwrap();
        assert_eq!(fam.location_noise_moment(1), Some(0.0));
        assert_eq!(fam.location_noise_moment(2), Some(4.0));
        assert_eq!(fam.location_noise_moment(4), Some(48.0));
    }
}
