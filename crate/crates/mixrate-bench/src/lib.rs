//! Shared instance generators for the benchmark targets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mixrate::measures::{MixingDistribution, DEFAULT_THETA_BOUNDS};

/// Deterministic random measure with `d` well-separated atoms.
pub fn random_measure(seed: u64, d: usize) -> MixingDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut locs: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        locs.sort_by(f64::total_cmp);
        if locs.windows(2).any(|w| w[1] - w[0] < 0.2) {
            continue;
        }
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
        let mass: f64 = raw.iter().sum();
        let atoms = raw
            .iter()
            .zip(&locs)
            .map(|(&w, &t)| (w / mass, t))
            .collect();
        return MixingDistribution::new(atoms, DEFAULT_THETA_BOUNDS).unwrap();
    }
}
