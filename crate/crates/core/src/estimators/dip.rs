use crate::error::{Error, Result};
use crate::frames::Displacement;

use super::map::CorrelationMap;

/// Minimum of a correlation map and the shape of its dip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DipResult {
    /// Integer location of the minimum.
    pub xi_min: Displacement,
    pub sigma_min: f64,
    pub fwhm_x: f64,
    pub fwhm_y: f64,
    /// Mean of the valid entries far from the dip (the single-region Fano
    /// factor when the arms are uncorrelated there).
    pub fano_far: f64,
}

impl DipResult {
    pub fn fwhm(&self) -> f64 {
        0.5 * (self.fwhm_x + self.fwhm_y)
    }
}

fn plateau_ring(map: &CorrelationMap) -> Option<f64> {
    let r = map.radius() as i64;
    let ring: Vec<f64> = map
        .entries()
        .filter(|(dx, dy, v)| (dx.abs() == r || dy.abs() == r) && v.is_finite())
        .map(|e| e.2)
        .collect();
    (!ring.is_empty()).then(|| ring.iter().sum::<f64>() / ring.len() as f64)
}

/// Distance from the minimum along one axis to the half-depth crossing,
/// interpolated linearly between integer samples.
fn half_crossing(
    map: &CorrelationMap,
    x0: i64,
    y0: i64,
    step: (i64, i64),
    level: f64,
) -> Result<f64> {
    let mut prev = map.get(x0, y0).unwrap();
    for k in 1.. {
        let v = map.get(x0 + k * step.0, y0 + k * step.1).ok_or_else(|| {
            Error::Minimum("dip does not reach half depth inside the window".into())
        })?;
        if !v.is_finite() {
            return Err(Error::Minimum("non-finite entry inside the dip".into()));
        }
        if v >= level {
            return Ok((k - 1) as f64 + (level - prev) / (v - prev));
        }
        prev = v;
    }
    unreachable!()
}

/// Gaussian dip fitted to a correlation map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianDip {
    pub plateau: f64,
    pub depth: f64,
    /// Standard deviation of the dip along each axis, in map units.
    pub width: f64,
}

impl GaussianDip {
    pub fn fwhm(&self) -> f64 {
        crate::simulator::theory::FWHM_PER_SIGMA * self.width
    }
}

/// Least-squares fit of `plateau - depth * exp(-r^2 / (2 w^2))` to the map
/// entries within `max_radius` of `center`.
///
/// Every entry contributes, so shallow dips under entry-wise noise are
/// resolved where the half-depth crossings of [`find_minimum`] are not.
pub fn fit_gaussian_dip(
    map: &CorrelationMap,
    center: Displacement,
    max_radius: f64,
) -> Result<GaussianDip> {
    let points: Vec<(f64, f64)> = map
        .entries()
        .filter(|e| e.2.is_finite())
        .map(|(dx, dy, v)| {
            (
                (dx as f64 - center.dx).powi(2) + (dy as f64 - center.dy).powi(2),
                v,
            )
        })
        .filter(|(r2, _)| *r2 <= max_radius * max_radius)
        .collect();
    if points.len() < 4 {
        return Err(Error::Minimum(format!(
            "{} valid entries within radius {max_radius}",
            points.len()
        )));
    }
    // the two linear coefficients have a closed form for each width
    let solve = |w: f64| {
        let (mut n, mut sg, mut sgg, mut sv, mut sgv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(r2, v) in &points {
            let g = (-r2 / (2.0 * w * w)).exp();
            n += 1.0;
            sg += g;
            sgg += g * g;
            sv += v;
            sgv += g * v;
        }
        let det = n * sgg - sg * sg;
        if det.abs() < 1e-12 * n * n {
            return None;
        }
        let plateau = (sgg * sv - sg * sgv) / det;
        let depth = -(n * sgv - sg * sv) / det;
        let sse: f64 = points
            .iter()
            .map(|&(r2, v)| {
                let e = v - plateau + depth * (-r2 / (2.0 * w * w)).exp();
                e * e
            })
            .sum();
        Some((
            sse,
            GaussianDip {
                plateau,
                depth,
                width: w,
            },
        ))
    };
    let mut best: Option<(f64, GaussianDip)> = None;
    let mut w = 0.25;
    while w <= max_radius {
        if let Some(fit) = solve(w) {
            if best.is_none_or(|b| fit.0 < b.0) {
                best = Some(fit);
            }
        }
        w *= 1.002;
    }
    match best {
        Some((_, dip)) if dip.depth > 0.0 => Ok(dip),
        _ => Err(Error::Minimum("no dip fits the map".into())),
    }
}

/// Locates the integer minimum of the map and measures the dip.
///
/// The depth runs from the minimum to the plateau; the plateau is the mean
/// of entries farther than three FWHM from the minimum, or of the window
/// border when none are that far.
pub fn find_minimum(map: &CorrelationMap) -> Result<DipResult> {
    let (mx, my, min) = map
        .entries()
        .filter(|e| e.2.is_finite())
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| Error::Minimum("map has no valid entries".into()))?;
    let r = map.radius() as i64;
    if mx.abs() == r || my.abs() == r {
        return Err(Error::Minimum(format!(
            "minimum at ({mx}, {my}) lies on the window boundary"
        )));
    }
    for dy in -1..=1 {
        for dx in -1..=1 {
            if !map.get(mx + dx, my + dy).unwrap().is_finite() {
                return Err(Error::Minimum(
                    "non-finite entry next to the minimum".into(),
                ));
            }
        }
    }

    let mut plateau =
        plateau_ring(map).ok_or_else(|| Error::Minimum("no valid border entries".into()))?;
    let mut widths = (0.0, 0.0);
    for _ in 0..4 {
        if plateau <= min {
            return Err(Error::Minimum("no dip below the plateau".into()));
        }
        let level = min + 0.5 * (plateau - min);
        let fx = half_crossing(map, mx, my, (-1, 0), level)?
            + half_crossing(map, mx, my, (1, 0), level)?;
        let fy = half_crossing(map, mx, my, (0, -1), level)?
            + half_crossing(map, mx, my, (0, 1), level)?;
        widths = (fx, fy);
        let cutoff = 3.0 * 0.5 * (fx + fy);
        let far: Vec<f64> = map
            .entries()
            .filter(|(dx, dy, v)| {
                v.is_finite() && ((dx - mx) as f64).hypot((dy - my) as f64) > cutoff
            })
            .map(|e| e.2)
            .collect();
        let next = if far.is_empty() {
            plateau_ring(map).unwrap()
        } else {
            far.iter().sum::<f64>() / far.len() as f64
        };
        if next == plateau {
            break;
        }
        plateau = next;
    }
    Ok(DipResult {
        xi_min: Displacement::new(mx as f64, my as f64),
        sigma_min: min,
        fwhm_x: widths.0,
        fwhm_y: widths.1,
        fano_far: plateau,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SubpixelMethod {
    /// Least-squares paraboloid over the 3x3 neighborhood.
    #[default]
    Paraboloid,
    /// Centroid of the dip depth over the 3x3 neighborhood.
    Centroid,
    /// Gaussian through the 3x3 neighborhood: a quadratic in the log of the
    /// depth below the plateau, weighted by the squared depth. Unbiased for
    /// dips narrower than the paraboloid assumes.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubpixelCenter {
    pub center: Displacement,
    /// Set when the fit was rejected and the integer minimum returned.
    pub fell_back: bool,
}

/// Refines the integer minimum of the map to sub-pixel precision.
pub fn subpixel_center(map: &CorrelationMap, method: SubpixelMethod) -> Result<SubpixelCenter> {
    let dip = find_minimum(map)?;
    let (mx, my) = (dip.xi_min.dx as i64, dip.xi_min.dy as i64);
    let mut z = [[0.0; 3]; 3];
    for (j, row) in z.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            *v = map.get(mx + i as i64 - 1, my + j as i64 - 1).unwrap();
        }
    }
    let refined = match method {
        SubpixelMethod::Paraboloid => paraboloid_vertex(&z),
        SubpixelMethod::Centroid => depth_centroid(&z, dip.fano_far),
        SubpixelMethod::Gaussian => gaussian_vertex(&z, dip.fano_far),
    };
    Ok(match refined {
        Some((ox, oy)) => SubpixelCenter {
            center: Displacement::new(mx as f64 + ox, my as f64 + oy),
            fell_back: false,
        },
        None => SubpixelCenter {
            center: dip.xi_min,
            fell_back: true,
        },
    })
}

/// Vertex of `a + b x + c y + d x^2 + e x y + f y^2` fitted by least
/// squares to `z[y+1][x+1]` on `{-1,0,1}^2`. `None` unless the surface is
/// convex with its vertex inside the neighborhood.
pub fn paraboloid_vertex(z: &[[f64; 3]; 3]) -> Option<(f64, f64)> {
    let (mut s, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, row) in z.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            let (x, y) = (i as f64 - 1.0, j as f64 - 1.0);
            s += v;
            sx += x * v;
            sy += y * v;
            sxx += x * x * v;
            syy += y * y * v;
            sxy += x * y * v;
        }
    }
    // normal equations of the 3x3 design decouple into these closed forms
    let b = sx / 6.0;
    let c = sy / 6.0;
    let e = sxy / 4.0;
    let d_plus_f = (sxx + syy - 4.0 / 3.0 * s) / 2.0;
    let d_minus_f = (sxx - syy) / 2.0;
    let d = 0.5 * (d_plus_f + d_minus_f);
    let f = 0.5 * (d_plus_f - d_minus_f);
    let det = 4.0 * d * f - e * e;
    if !(d > 0.0 && det > 0.0) {
        return None;
    }
    let x = (e * c - 2.0 * f * b) / det;
    let y = (e * b - 2.0 * d * c) / det;
    (x.abs() <= 1.0 && y.abs() <= 1.0).then_some((x, y))
}

/// Vertex of `ln(plateau - z) = a + b x + c y + d x^2 + f y^2` fitted with
/// weights `(plateau - z)^2`; entries at or above the plateau are skipped.
pub fn gaussian_vertex(z: &[[f64; 3]; 3], plateau: f64) -> Option<(f64, f64)> {
    let mut ata = [[0.0f64; 5]; 5];
    let mut atb = [0.0f64; 5];
    let mut used = 0;
    for (j, row) in z.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            let depth = plateau - v;
            if depth.is_nan() || depth <= 0.0 {
                continue;
            }
            used += 1;
            let (x, y) = (i as f64 - 1.0, j as f64 - 1.0);
            let basis = [1.0, x, y, x * x, y * y];
            let w = depth * depth;
            for a in 0..5 {
                atb[a] += w * basis[a] * depth.ln();
                for b in 0..5 {
                    ata[a][b] += w * basis[a] * basis[b];
                }
            }
        }
    }
    if used < 5 {
        return None;
    }
    let c = solve5(ata, atb)?;
    if !(c[3] < 0.0 && c[4] < 0.0) {
        return None;
    }
    let (x, y) = (-c[1] / (2.0 * c[3]), -c[2] / (2.0 * c[4]));
    (x.abs() <= 1.0 && y.abs() <= 1.0).then_some((x, y))
}

fn solve5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let pivot = (col..5).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..5 {
            let k = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (v, p) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *v -= k * p;
            }
            b[row] -= k * b[col];
        }
    }
    let mut x = [0.0; 5];
    for row in (0..5).rev() {
        let tail: f64 = (row + 1..5).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn depth_centroid(z: &[[f64; 3]; 3], plateau: f64) -> Option<(f64, f64)> {
    let (mut w, mut wx, mut wy) = (0.0, 0.0, 0.0);
    for (j, row) in z.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            let depth = (plateau - v).max(0.0);
            w += depth;
            wx += depth * (i as f64 - 1.0);
            wy += depth * (j as f64 - 1.0);
        }
    }
    (w > 0.0).then(|| (wx / w, wy / w))
}
