//! Closed-form statistics of the cell-based twin-beam model.
//!
//! These are leading-order predictions used to pick simulation parameters
//! and to cross-check ensembles; they assume square bins aligned with the
//! coherence cells and a balanced reflection center.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

fn psi(u: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    u * n.cdf(u) + n.pdf(u)
}

/// Probability that the partner of a photon placed uniformly in a bin of
/// `bin_side` pixels lands `k` bins away along one axis, for Gaussian
/// position jitter of the given FWHM.
pub fn bin_transfer_1d(bin_side: f64, jitter_fwhm: f64, k: i64) -> f64 {
    let s = jitter_fwhm / FWHM_PER_SIGMA;
    let l = bin_side;
    // integral over x in [0, l) of Phi((t - x) / s)
    let integral = |t: f64| s * (psi(t / s) - psi((t - l) / s));
    let k = k as f64;
    (integral((k + 1.0) * l) - integral(k * l)) / l
}

/// Probability that both photons of a pair fall in mirrored bins.
pub fn collection_probability(bin_side: f64, jitter_fwhm: f64) -> f64 {
    let q = bin_transfer_1d(bin_side, jitter_fwhm, 0);
    q * q
}

/// Expected noise reduction factor for balanced arms of efficiency `eta`,
/// no background or read noise, and per-bin excess noise `excess` (the
/// Fano factor minus one).
pub fn expected_twin_sigma(eta: f64, excess: f64, bin_side: f64, jitter_fwhm: f64) -> f64 {
    let reach = (3.0 * jitter_fwhm / bin_side).ceil() as i64 + 2;
    let q: Vec<f64> = (-reach..=reach)
        .map(|k| bin_transfer_1d(bin_side, jitter_fwhm, k))
        .collect();
    let q0 = bin_transfer_1d(bin_side, jitter_fwhm, 0);
    let p0 = q0 * q0;
    let sum_sq_1d: f64 = q.iter().map(|v| v * v).sum();
    let others = sum_sq_1d * sum_sq_1d - p0 * p0;
    1.0 - eta * p0 + 0.5 * excess * ((1.0 - p0).powi(2) + others)
}

/// Noise reduction factor of perfectly collected twin counts thinned with
/// unequal efficiencies. `pair_excess` is `Var(n)/<n> - 1` of the pair number.
pub fn unbalanced_sigma(eta_s: f64, eta_i: f64, pair_excess: f64) -> f64 {
    let sum = eta_s + eta_i;
    let diff = eta_s - eta_i;
    1.0 - 2.0 * eta_s * eta_i / sum + diff * diff * pair_excess / sum
}

/// Efficiency giving an expected noise reduction `sigma` for bins much
/// larger than the jitter (leading term only).
pub fn efficiency_for_sigma(sigma: f64, bin_side: f64, jitter_fwhm: f64) -> f64 {
    ((1.0 - sigma) / collection_probability(bin_side, jitter_fwhm)).clamp(0.0, 1.0)
}
