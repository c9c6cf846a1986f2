use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frames::{Displacement, Frame, Region};

/// Point reflection mapping signal pixel `(x, y)` to idler pixel
/// `(sum_x - x, sum_y - y)` before displacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reflection {
    pub sum_x: i64,
    pub sum_y: i64,
}

impl Reflection {
    /// Reflection through the center of an idler frame of this size.
    pub fn through_center(width: usize, height: usize) -> Self {
        Self {
            sum_x: width as i64 - 1,
            sum_y: height as i64 - 1,
        }
    }

    pub fn of(frame: &Frame) -> Self {
        Self::through_center(frame.width(), frame.height())
    }

    /// Idler region paired with `region` at integer displacement `(dx, dy)`.
    pub fn partner(&self, region: Region, dx: i64, dy: i64) -> Option<Region> {
        let x1 = self.sum_x - (region.x0 + region.width - 1) as i64 + dx;
        let y1 = self.sum_y - (region.y0 + region.height - 1) as i64 + dy;
        if x1 < 0 || y1 < 0 {
            return None;
        }
        Some(Region::new(
            x1 as usize,
            y1 as usize,
            region.width,
            region.height,
        ))
    }
}

/// Noise reduction factor over a square window of integer displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMap {
    radius: usize,
    /// Row-major over `dy` then `dx`, each in `-radius..=radius`.
    sigma: Vec<f64>,
    numerator: Vec<f64>,
    denominator: Vec<f64>,
    pub region: Region,
    pub reflection: Reflection,
    pub pixel_pitch: f64,
}

impl CorrelationMap {
    /// Builds a map from precomputed values, e.g. an analytic test surface.
    pub fn from_values(radius: usize, sigma: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if sigma.len() != side * side {
            return Err(Error::Window(format!(
                "{} values for a radius-{radius} window",
                sigma.len()
            )));
        }
        Ok(Self {
            radius,
            numerator: sigma.clone(),
            denominator: vec![1.0; sigma.len()],
            sigma,
            region: Region::new(0, 0, 0, 0),
            reflection: Reflection { sum_x: 0, sum_y: 0 },
            pixel_pitch: 1.0,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    fn index(&self, dx: i64, dy: i64) -> Option<usize> {
        let r = self.radius as i64;
        if dx.abs() > r || dy.abs() > r {
            return None;
        }
        Some(((dy + r) as usize) * self.side() + (dx + r) as usize)
    }

    /// Value at integer displacement; NaN marks an invalid entry.
    pub fn get(&self, dx: i64, dy: i64) -> Option<f64> {
        self.index(dx, dy).map(|i| self.sigma[i])
    }

    /// Variance of the difference and mean of the sum at a displacement.
    pub fn parts(&self, dx: i64, dy: i64) -> Option<(f64, f64)> {
        self.index(dx, dy)
            .map(|i| (self.numerator[i], self.denominator[i]))
    }

    /// `(dx, dy, sigma)` for every entry, row-major.
    pub fn entries(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        let r = self.radius as i64;
        let side = self.side();
        self.sigma
            .iter()
            .enumerate()
            .map(move |(i, &v)| ((i % side) as i64 - r, (i / side) as i64 - r, v))
    }

    /// Entry-wise mean of maps over the same window, e.g. across shots.
    pub fn mean(maps: &[CorrelationMap]) -> Result<CorrelationMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Estimator("mean of zero maps".into()))?;
        if maps.iter().any(|m| m.radius != first.radius) {
            return Err(Error::Window("maps have different windows".into()));
        }
        let n = maps.len() as f64;
        let avg = |f: fn(&CorrelationMap) -> &Vec<f64>| -> Vec<f64> {
            (0..first.sigma.len())
                .map(|i| maps.iter().map(|m| f(m)[i]).sum::<f64>() / n)
                .collect()
        };
        Ok(CorrelationMap {
            sigma: avg(|m| &m.sigma),
            numerator: avg(|m| &m.numerator),
            denominator: avg(|m| &m.denominator),
            ..first.clone()
        })
    }
}

fn check_window(
    signal: &Frame,
    idler: &Frame,
    region: Region,
    radius: usize,
    reflection: Reflection,
) -> Result<()> {
    region.check_stats(signal)?;
    let r = radius as i64;
    let far = reflection.partner(region, -r, -r);
    let near = reflection.partner(region, r, r);
    match (far, near) {
        (Some(_), Some(n)) if n.fits(idler.width(), idler.height()) => Ok(()),
        _ => Err(Error::Window(format!(
            "radius-{radius} window around the reflection of {region} leaves the {}x{} idler frame",
            idler.width(),
            idler.height()
        ))),
    }
}

/// Evaluates, for every integer displacement in the window, the spatial
/// variance of `N_s(x) - N_i(c - x + xi)` over the signal region divided by
/// the spatial mean of `N_s(x) + N_i(c - x + xi)`.
///
/// Entries with a non-positive denominator are NaN.
pub fn sigma_map(
    signal: &Frame,
    idler: &Frame,
    region: Region,
    radius: usize,
    reflection: Reflection,
) -> Result<CorrelationMap> {
    check_window(signal, idler, region, radius, reflection)?;
    let r = radius as i64;
    let side = 2 * radius + 1;
    let parts: Vec<(f64, f64)> = (0..side * side)
        .into_par_iter()
        .map(|k| {
            let dx = (k % side) as i64 - r;
            let dy = (k / side) as i64 - r;
            pair_moments(signal, idler, region, reflection, dx, dy)
        })
        .collect();
    Ok(assemble(
        parts,
        radius,
        region,
        reflection,
        signal.pixel_pitch(),
    ))
}

fn assemble(
    parts: Vec<(f64, f64)>,
    radius: usize,
    region: Region,
    reflection: Reflection,
    pixel_pitch: f64,
) -> CorrelationMap {
    let (numerator, denominator): (Vec<f64>, Vec<f64>) = parts.into_iter().unzip();
    let sigma = numerator
        .iter()
        .zip(&denominator)
        .map(|(n, d)| if *d > 0.0 { n / d } else { f64::NAN })
        .collect();
    CorrelationMap {
        radius,
        sigma,
        numerator,
        denominator,
        region,
        reflection,
        pixel_pitch,
    }
}

/// `(variance of difference, mean of sum)` at one integer displacement.
fn pair_moments(
    signal: &Frame,
    idler: &Frame,
    region: Region,
    refl: Reflection,
    dx: i64,
    dy: i64,
) -> (f64, f64) {
    let (sw, iw) = (signal.width(), idler.width());
    let (s, i) = (signal.data(), idler.data());
    let mut sum_d = 0.0;
    let mut sum_dd = 0.0;
    let mut sum_t = 0.0;
    for y in region.y0..region.y0 + region.height {
        let iy = (refl.sum_y - y as i64 + dy) as usize;
        let srow = &s[y * sw + region.x0..y * sw + region.x0 + region.width];
        // idler column for region.x0, walking leftwards
        let ix0 = (refl.sum_x - region.x0 as i64 + dx) as usize;
        let irow = &i[iy * iw..iy * iw + iw];
        for (k, &sv) in srow.iter().enumerate() {
            let iv = irow[ix0 - k] as f64;
            let sv = sv as f64;
            let d = sv - iv;
            sum_d += d;
            sum_dd += d * d;
            sum_t += sv + iv;
        }
    }
    let n = region.len() as f64;
    let md = sum_d / n;
    ((sum_dd / n - md * md).max(0.0), sum_t / n)
}

/// Bilinear sample of a frame at real coordinates; `None` outside.
fn bilinear(frame: &Frame, x: f64, y: f64) -> Option<f64> {
    let (x0, y0) = (x.floor(), y.floor());
    if x0 < 0.0 || y0 < 0.0 {
        return None;
    }
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as usize, y0 as usize);
    let x1 = if fx > 0.0 { xi + 1 } else { xi };
    let y1 = if fy > 0.0 { yi + 1 } else { yi };
    if x1 >= frame.width() || y1 >= frame.height() {
        return None;
    }
    let v00 = frame.get(xi, yi) as f64;
    let v10 = frame.get(x1, yi) as f64;
    let v01 = frame.get(xi, y1) as f64;
    let v11 = frame.get(x1, y1) as f64;
    Some(
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy,
    )
}

/// Noise reduction factor at a fractional displacement, sampling the idler
/// frame by bilinear interpolation.
pub fn sigma_at(
    signal: &Frame,
    idler: &Frame,
    region: Region,
    reflection: Reflection,
    xi: Displacement,
) -> Result<f64> {
    region.check_stats(signal)?;
    let mut sum_d = 0.0;
    let mut sum_dd = 0.0;
    let mut sum_t = 0.0;
    for (x, y) in region.pixels() {
        let ix = reflection.sum_x as f64 - x as f64 + xi.dx;
        let iy = reflection.sum_y as f64 - y as f64 + xi.dy;
        let iv = bilinear(idler, ix, iy).ok_or_else(|| {
            Error::Window(format!(
                "displacement ({}, {}) leaves the idler frame",
                xi.dx, xi.dy
            ))
        })?;
        let sv = signal.get(x, y) as f64;
        let d = sv - iv;
        sum_d += d;
        sum_dd += d * d;
        sum_t += sv + iv;
    }
    let n = region.len() as f64;
    let md = sum_d / n;
    let mean_t = sum_t / n;
    if mean_t <= 0.0 {
        return Ok(f64::NAN);
    }
    Ok((sum_dd / n - md * md).max(0.0) / mean_t)
}
