use crate::error::{Error, Result};
use crate::frames::{Frame, Region};

/// Spatial-ensemble moments of a region. The variance uses the population
/// (1/n) convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionStats {
    pub mean: f64,
    pub variance: f64,
    pub n: usize,
}

impl RegionStats {
    pub const ZERO: RegionStats = RegionStats {
        mean: 0.0,
        variance: 0.0,
        n: 0,
    };

    /// Moments of an arbitrary sample set.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut acc = Moments::default();
        for v in values {
            acc.push(v);
        }
        acc.finish()
    }
}

/// Single-pass moment accumulator, shifted by the first sample to keep the
/// variance well conditioned.
#[derive(Default, Clone, Copy)]
pub(crate) struct Moments {
    n: usize,
    shift: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    #[inline]
    pub(crate) fn push(&mut self, v: f64) {
        if self.n == 0 {
            self.shift = v;
        }
        let d = v - self.shift;
        self.n += 1;
        self.sum += d;
        self.sum_sq += d * d;
    }

    pub(crate) fn finish(self) -> Result<RegionStats> {
        if self.n < 2 {
            return Err(Error::DegenerateRegion(format!(
                "{} samples, need at least 2",
                self.n
            )));
        }
        let n = self.n as f64;
        let m = self.sum / n;
        Ok(RegionStats {
            mean: self.shift + m,
            variance: (self.sum_sq / n - m * m).max(0.0),
            n: self.n,
        })
    }
}

pub fn region_stats(frame: &Frame, region: Region) -> Result<RegionStats> {
    region.check_stats(frame)?;
    // exact mean from a plain sum, variance from the shifted accumulator
    let mut acc = Moments::default();
    let mut total = 0.0;
    for (x, y) in region.pixels() {
        let v = frame.get(x, y) as f64;
        total += v;
        acc.push(v);
    }
    let mut stats = acc.finish()?;
    stats.mean = total / region.len() as f64;
    Ok(stats)
}

/// Variance-to-mean ratio over the region.
pub fn fano(frame: &Frame, region: Region) -> Result<f64> {
    let s = region_stats(frame, region)?;
    if s.mean == 0.0 {
        return Err(Error::Estimator("Fano factor of a zero-mean region".into()));
    }
    Ok(s.variance / s.mean)
}
