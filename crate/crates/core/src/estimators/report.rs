use std::io::Write;

use crate::error::{Error, Result};
use crate::frames::{Displacement, Frame, Region};

use super::correct::{fano_corrected, sigma_corrected};
use super::dip::{find_minimum, subpixel_center, DipResult, SubpixelMethod};
use super::map::{sigma_map, CorrelationMap, Reflection};
use super::stats::{region_stats, RegionStats};

/// Per-shot noise figures.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseReport {
    pub shot_id: u64,
    pub mean_s: f64,
    pub mean_i: f64,
    pub fano_s: f64,
    pub fano_i: f64,
    pub sigma: f64,
    pub sigma_corrected: Option<f64>,
    pub fano_corrected: Option<f64>,
    /// Sub-pixel symmetry center; zero when the minimum was not searched.
    pub xi: Displacement,
    pub fwhm_x: f64,
    pub fwhm_y: f64,
}

impl NoiseReport {
    /// Mean of the two single-arm Fano factors.
    pub fn fano(&self) -> f64 {
        0.5 * (self.fano_s + self.fano_i)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AnalysisSpec {
    /// Signal region in frame coordinates (binned frames use binned units).
    pub region: Region,
    pub radius: usize,
    /// Nominal reflection; `None` reflects through the idler frame center.
    pub reflection: Option<Reflection>,
    /// Search the minimum of the map; otherwise report the nominal center.
    pub locate: bool,
    pub subpixel: SubpixelMethod,
}

impl AnalysisSpec {
    pub fn new(region: Region, radius: usize) -> Self {
        Self {
            region,
            radius,
            reflection: None,
            locate: true,
            subpixel: SubpixelMethod::Paraboloid,
        }
    }

    pub fn at_nominal_center(mut self) -> Self {
        self.locate = false;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub report: NoiseReport,
    pub map: CorrelationMap,
    pub dip: Option<DipResult>,
    /// Raw variance of the difference and mean of the sum at the minimum.
    pub parts: (f64, f64),
}

/// Background frames of both arms for the subtraction correction.
pub struct Background<'a> {
    pub signal: &'a Frame,
    pub idler: &'a Frame,
}

/// Runs the full single-shot pipeline: map, minimum, sub-pixel center,
/// Fano factors and, with background frames, the corrected figures.
pub fn analyze_pair(
    signal: &Frame,
    idler: &Frame,
    spec: &AnalysisSpec,
    shot_id: u64,
    background: Option<Background<'_>>,
) -> Result<Analysis> {
    if !signal.same_shape(idler) {
        return Err(Error::InvalidFrame(format!(
            "signal {}x{} and idler {}x{} differ",
            signal.width(),
            signal.height(),
            idler.width(),
            idler.height()
        )));
    }
    let refl = spec.reflection.unwrap_or_else(|| Reflection::of(idler));
    let map = sigma_map(signal, idler, spec.region, spec.radius, refl)?;
    let (dip, xi, ix, iy) = if spec.locate {
        let dip = find_minimum(&map)?;
        let center = subpixel_center(&map, spec.subpixel)?.center;
        (
            Some(dip),
            center,
            dip.xi_min.dx as i64,
            dip.xi_min.dy as i64,
        )
    } else {
        (None, Displacement::ZERO, 0, 0)
    };
    let sigma = map.get(ix, iy).unwrap();
    let parts = map.parts(ix, iy).unwrap();
    let idler_region = refl
        .partner(spec.region, ix, iy)
        .expect("window checked by sigma_map");
    let st_s = region_stats(signal, spec.region)?;
    let st_i = region_stats(idler, idler_region)?;

    let (sigma_corrected, fano_corr) = match background {
        Some(bg) => {
            let bs = region_stats(bg.signal, spec.region)?;
            let bi = region_stats(bg.idler, idler_region)?;
            let sc = sigma_corrected(parts.0, parts.1, &bs, &bi)?;
            let fs = fano_corrected(&st_s, &bs)?;
            let fi = fano_corrected(&st_i, &bi)?;
            (Some(sc.value), Some(0.5 * (fs.value + fi.value)))
        }
        None => (None, None),
    };
    let ratio = |s: &RegionStats| {
        if s.mean != 0.0 {
            s.variance / s.mean
        } else {
            f64::NAN
        }
    };
    Ok(Analysis {
        report: NoiseReport {
            shot_id,
            mean_s: st_s.mean,
            mean_i: st_i.mean,
            fano_s: ratio(&st_s),
            fano_i: ratio(&st_i),
            sigma,
            sigma_corrected,
            fano_corrected: fano_corr,
            xi,
            fwhm_x: dip.map_or(f64::NAN, |d| d.fwhm_x),
            fwhm_y: dip.map_or(f64::NAN, |d| d.fwhm_y),
        },
        map,
        dip,
        parts,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const REPORT_HEADER: [&str; 12] = [
    "shot_id",
    "mean_s",
    "mean_i",
    "fano_s",
    "fano_i",
    "sigma",
    "sigma_corrected",
    "fano_corrected",
    "xi_x",
    "xi_y",
    "fwhm_x",
    "fwhm_y",
];

pub fn write_report_csv<W: Write>(out: W, reports: &[NoiseReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        w.write_record([
            r.shot_id.to_string(),
            r.mean_s.to_string(),
            r.mean_i.to_string(),
            r.fano_s.to_string(),
            r.fano_i.to_string(),
            r.sigma.to_string(),
            opt(r.sigma_corrected),
            opt(r.fano_corrected),
            r.xi.dx.to_string(),
            r.xi.dy.to_string(),
            r.fwhm_x.to_string(),
            r.fwhm_y.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_map_csv<W: Write>(out: W, map: &CorrelationMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dx", "dy", "sigma"])?;
    for (dx, dy, v) in map.entries() {
        w.write_record([dx.to_string(), dy.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_csv_layout() {
        let r = NoiseReport {
            shot_id: 3,
            mean_s: 1.0,
            mean_i: 2.0,
            fano_s: 1.5,
            fano_i: 1.25,
            sigma: 0.5,
            sigma_corrected: None,
            fano_corrected: Some(1.0),
            xi: Displacement::new(0.25, -0.5),
            fwhm_x: 8.0,
            fwhm_y: 7.5,
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "shot_id,mean_s,mean_i,fano_s,fano_i,sigma,sigma_corrected,fano_corrected,xi_x,xi_y,fwhm_x,fwhm_y\n\
             3,1,2,1.5,1.25,0.5,,1,0.25,-0.5,8,7.5\n"
        );
    }

    #[test]
    fn map_csv_layout() {
        let m = CorrelationMap::from_values(1, (0..9).map(|v| v as f64).collect()).unwrap();
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &m).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dx,dy,sigma\n-1,-1,0\n0,-1,1\n"));
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn mismatched_frames() {
        let a = Frame::zeros(8, 8, 20.0).unwrap();
        let b = Frame::zeros(8, 6, 20.0).unwrap();
        let spec = AnalysisSpec::new(Region::new(2, 2, 4, 2), 1);
        assert!(analyze_pair(&a, &b, &spec, 0, None).is_err());
    }
}
