//! Photon-number samplers.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

/// Draws a multi-thermal photon number: the sum of `modes` independent
/// Bose-Einstein variables of mean `mean_per_mode`.
///
/// Sampled as a Gamma-mixed Poisson, which is exactly negative binomial
/// with `modes` successes.
pub fn multithermal<R: Rng + ?Sized>(rng: &mut R, modes: u32, mean_per_mode: f64) -> u64 {
    if mean_per_mode <= 0.0 || modes == 0 {
        return 0;
    }
    let intensity = Gamma::new(modes as f64, mean_per_mode)
        .expect("positive gamma parameters")
        .sample(rng);
    poisson(rng, intensity)
}

pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("positive poisson mean")
        .sample(rng) as u64
}

/// Binomial thinning: each of `n` photons survives with probability `p`.
pub fn thin<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}
