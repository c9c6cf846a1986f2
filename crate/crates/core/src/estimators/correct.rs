use crate::error::{Error, Result};

use super::stats::RegionStats;

/// A background-corrected ratio. `negative_numerator` flags runs where the
/// background variance exceeded the measured one; the value is kept as is.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corrected {
    pub value: f64,
    pub negative_numerator: bool,
}

fn corrected_ratio(numerator: f64, denominator: f64) -> Result<Corrected> {
    if denominator <= 0.0 {
        return Err(Error::Estimator(format!(
            "background-corrected mean {denominator} is not positive"
        )));
    }
    Ok(Corrected {
        value: numerator / denominator,
        negative_numerator: numerator < 0.0,
    })
}

/// Noise reduction factor with the background variances and means of both
/// regions subtracted.
pub fn sigma_corrected(
    raw_numerator: f64,
    raw_denominator: f64,
    bg_s: &RegionStats,
    bg_i: &RegionStats,
) -> Result<Corrected> {
    corrected_ratio(
        raw_numerator - bg_s.variance - bg_i.variance,
        raw_denominator - bg_s.mean - bg_i.mean,
    )
}

/// Single-arm Fano factor with the background contribution subtracted.
pub fn fano_corrected(stats: &RegionStats, bg: &RegionStats) -> Result<Corrected> {
    corrected_ratio(stats.variance - bg.variance, stats.mean - bg.mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg(mean: f64, variance: f64) -> RegionStats {
        RegionStats {
            mean,
            variance,
            n: 289,
        }
    }

    #[test]
    fn zero_background_is_identity() {
        let c = sigma_corrected(640.0, 800.0, &RegionStats::ZERO, &RegionStats::ZERO).unwrap();
        assert_eq!(c.value, 0.8);
        assert!(!c.negative_numerator);
    }

    #[test]
    fn hand_case() {
        let c = sigma_corrected(500.0, 1000.0, &bg(100.0, 100.0), &bg(100.0, 100.0)).unwrap();
        assert_eq!(c.value, 0.375);
    }

    #[test]
    fn negative_numerator_is_flagged_not_clamped() {
        let c = sigma_corrected(150.0, 1000.0, &bg(100.0, 100.0), &bg(100.0, 100.0)).unwrap();
        assert!(c.negative_numerator);
        assert!((c.value + 50.0 / 800.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_denominator() {
        assert!(sigma_corrected(500.0, 200.0, &bg(100.0, 1.0), &bg(100.0, 1.0)).is_err());
    }

    #[test]
    fn fano_subtraction() {
        let s = RegionStats {
            mean: 1120.0,
            variance: 1700.0,
            n: 289,
        };
        let c = fano_corrected(&s, &bg(120.0, 200.0)).unwrap();
        assert_eq!(c.value, 1.5);
    }
}
