//! Differential imaging of a weak absorbing object in the signal arm.
//!
//! The absorption `1 - alpha` of each superpixel is estimated from the
//! shot-to-shot difference of the two arms, each normalized by the mean of
//! object-free calibration shots:
//!
//! ```text
//! 1 - alpha_hat(x) = N_i(x') / c_i(x') - N_s(x) / c_s(x)
//! ```
//!
//! With twin beams the spatial noise common to `x` and its partner `x'`
//! cancels and the estimator variance scales with the noise reduction
//! factor. The direct estimator `1 - N_s(x) / c_s(x)` uses the signal arm
//! alone.
//!
//! The signal-to-noise ratio of an image is the per-superpixel mean of the
//! estimate over its shot-to-shot standard deviation, averaged over the
//! superpixels covered by the object. Under this definition the twin-beam
//! advantage over two independent coherent beams is `1/sqrt(sigma)` for a
//! vanishing absorption.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{analyze_pair, mean_and_stderr, AnalysisSpec, Reflection};
use crate::frames::{block_mean, BinMode, Displacement, Frame, Region};
use crate::simulator::{
    apply_object, coherent_with_object, shot_seed, simulate_twin_pair, theory, Detector,
    DetectorConfig, Grid, ObjectMask, ShotPair, SourceConfig,
};

/// Per-superpixel mean counts of object-free shots.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub signal: Frame,
    pub idler: Frame,
    pub shots: usize,
}

pub fn calibrate(shots: &[ShotPair]) -> Result<Calibration> {
    let first = shots
        .first()
        .ok_or_else(|| Error::Imaging("calibration needs at least one shot".into()))?;
    let mean = |pick: fn(&ShotPair) -> &Frame| -> Result<Frame> {
        let f0 = pick(first);
        let mut acc = vec![0.0f64; f0.data().len()];
        for s in shots {
            let f = pick(s);
            if !f.same_shape(f0) {
                return Err(Error::Imaging("calibration shots differ in shape".into()));
            }
            for (a, v) in acc.iter_mut().zip(f.data()) {
                *a += *v as f64;
            }
        }
        let n = shots.len() as f64;
        Frame::new(
            f0.width(),
            f0.height(),
            f0.pixel_pitch(),
            acc.into_iter().map(|v| (v / n) as f32).collect(),
        )
    };
    Ok(Calibration {
        signal: mean(|s| &s.signal)?,
        idler: mean(|s| &s.idler)?,
        shots: shots.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Idler minus signal, both normalized.
    Differential,
    /// Signal arm only.
    Direct,
}

/// Where and how to read the object off the binned frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagingGeometry {
    /// Object region in superpixel coordinates of the signal frame.
    pub region: Region,
    /// Symmetry center offset in superpixels, rounded to the nearest one.
    pub center: Displacement,
    pub bin: BinMode,
    pub estimator: Estimator,
}

/// Estimated absorption `1 - alpha` per superpixel of the region.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructedImage {
    pub region: Region,
    pub bin: BinMode,
    pub shots: usize,
    /// Row-major over the region.
    pub absorption: Vec<f64>,
    /// Standard error of each absorption estimate.
    pub stderr: Vec<f64>,
    /// Shot-to-shot standard deviation of the single-shot estimate.
    pub spread: Vec<f64>,
}

impl ReconstructedImage {
    /// Mean and standard error, over the selected superpixels, of the
    /// per-superpixel signal-to-noise ratio.
    pub fn snr(&self, select: &[bool]) -> Result<(f64, f64)> {
        if select.len() != self.absorption.len() {
            return Err(Error::Imaging("selection does not match the image".into()));
        }
        let values: Vec<f64> = self
            .absorption
            .iter()
            .zip(&self.spread)
            .zip(select)
            .filter(|(_, keep)| **keep)
            .map(|((a, s), _)| if *s > 0.0 { (a / s).abs() } else { 0.0 })
            .collect();
        if values.is_empty() {
            return Err(Error::Imaging("no object superpixels selected".into()));
        }
        Ok(mean_and_stderr(&values))
    }
}

fn partner_origin(idler: &Frame, region: Region, center: Displacement) -> Result<Region> {
    let (dx, dy) = (center.dx.round() as i64, center.dy.round() as i64);
    Reflection::of(idler)
        .partner(region, dx, dy)
        .filter(|p| p.fits(idler.width(), idler.height()))
        .ok_or_else(|| {
            Error::Imaging(format!(
                "center ({}, {}) puts the partner of {region} outside the idler frame",
                center.dx, center.dy
            ))
        })
}

fn single_shot(
    shot: &ShotPair,
    cal: &Calibration,
    geom: &ImagingGeometry,
    partner: Region,
) -> Result<Vec<f64>> {
    let r = geom.region;
    let mut out = Vec::with_capacity(r.len());
    for (x, y) in r.pixels() {
        let cs = cal.signal.get(x, y) as f64;
        if cs <= 0.0 {
            return Err(Error::Imaging(format!(
                "calibration mean at ({x}, {y}) is not positive"
            )));
        }
        let ns = shot.signal.get(x, y) as f64 / cs;
        let est = match geom.estimator {
            Estimator::Direct => 1.0 - ns,
            Estimator::Differential => {
                // partner pixel mirrors through the region
                let px = partner.x0 + (r.x0 + r.width - 1 - x);
                let py = partner.y0 + (r.y0 + r.height - 1 - y);
                let ci = cal.idler.get(px, py) as f64;
                if ci <= 0.0 {
                    return Err(Error::Imaging(format!(
                        "idler calibration mean at ({px}, {py}) is not positive"
                    )));
                }
                shot.idler.get(px, py) as f64 / ci - ns
            }
        };
        out.push(est);
    }
    Ok(out)
}

/// Reconstructs the absorption image from shots taken with the object in
/// place. With a single shot the standard error is the spatial standard
/// deviation of the estimate over the region.
pub fn reconstruct(
    shots: &[ShotPair],
    calibration: &Calibration,
    geometry: &ImagingGeometry,
) -> Result<ReconstructedImage> {
    let first = shots
        .first()
        .ok_or_else(|| Error::Imaging("reconstruction needs at least one shot".into()))?;
    geometry.bin.validate()?;
    geometry.region.check_in(&first.signal)?;
    for s in shots {
        if !s.signal.same_shape(&calibration.signal) || !s.idler.same_shape(&calibration.idler) {
            return Err(Error::Imaging(
                "shot and calibration frames differ in shape".into(),
            ));
        }
    }
    let partner = partner_origin(&first.idler, geometry.region, geometry.center)?;
    let per_shot: Vec<Vec<f64>> = shots
        .par_iter()
        .map(|s| single_shot(s, calibration, geometry, partner))
        .collect::<Result<_>>()?;

    let n = per_shot.len();
    let len = geometry.region.len();
    let mut absorption = vec![0.0; len];
    let mut spread = vec![0.0; len];
    for (k, (a, s)) in absorption.iter_mut().zip(spread.iter_mut()).enumerate() {
        let column: Vec<f64> = per_shot.iter().map(|v| v[k]).collect();
        let (m, se) = mean_and_stderr(&column);
        *a = m;
        *s = if n > 1 { se * (n as f64).sqrt() } else { 0.0 };
    }
    let stderr = if n > 1 {
        spread.iter().map(|s| s / (n as f64).sqrt()).collect()
    } else {
        let (_, se) = mean_and_stderr(&per_shot[0]);
        let spatial = se * (len as f64).sqrt();
        spread = vec![spatial; len];
        vec![spatial; len]
    };
    Ok(ReconstructedImage {
        region: geometry.region,
        bin: geometry.bin,
        shots: n,
        absorption,
        stderr,
        spread,
    })
}

/// Mean transmittance of each superpixel of `region` (superpixel units).
pub fn superpixel_alpha(mask: &ObjectMask, factor: usize, region: Region) -> Result<Vec<f64>> {
    let frame = Frame::new(mask.width(), mask.height(), 1.0, mask.alpha().to_vec())?;
    let coarse = block_mean(&frame, factor)?;
    region.check_in(&coarse)?;
    Ok(region
        .pixels()
        .map(|(x, y)| coarse.get(x, y) as f64)
        .collect())
}

pub const IMAGE_HEADER: [&str; 5] = [
    "superpixel_x",
    "superpixel_y",
    "alpha_true",
    "alpha_est",
    "stderr",
];

pub fn write_image_csv<W: Write>(
    out: W,
    image: &ReconstructedImage,
    alpha_true: &[f64],
) -> Result<()> {
    if alpha_true.len() != image.absorption.len() {
        return Err(Error::Imaging(
            "true transmittance does not match the image".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(IMAGE_HEADER)?;
    for (k, (x, y)) in image.region.pixels().enumerate() {
        w.write_record([
            x.to_string(),
            y.to_string(),
            alpha_true[k].to_string(),
            (1.0 - image.absorption[k]).to_string(),
            image.stderr[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Matched twin-beam and coherent-light imaging runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrComparison {
    /// Transmittance deficit `1 - alpha` of the object.
    pub deficit: f64,
    /// Detected photoelectrons per superpixel without the object.
    pub photon_flux: f64,
    /// Noise reduction factor the twin source was set up for.
    pub sigma_target: f64,
    /// Noise reduction factor measured on the object-free twin shots.
    pub sigma_twin: f64,
    /// Noise reduction factor measured on the twin shots with the object.
    pub sigma_object: f64,
    pub snr_quantum: f64,
    pub snr_quantum_se: f64,
    pub snr_classical_differential: f64,
    pub snr_classical_differential_se: f64,
    pub snr_classical_direct: f64,
    pub snr_classical_direct_se: f64,
    pub shots: usize,
}

impl SnrComparison {
    /// Twin over coherent differential SNR, with its standard error.
    pub fn ratio(&self) -> (f64, f64) {
        let r = self.snr_quantum / self.snr_classical_differential;
        let rel = (self.snr_quantum_se / self.snr_quantum)
            .hypot(self.snr_classical_differential_se / self.snr_classical_differential);
        (r, r * rel)
    }

    /// Small-absorption prediction `1/sqrt(sigma)`.
    pub fn predicted_ratio(&self) -> f64 {
        1.0 / self.sigma_target.sqrt()
    }

    /// `1/sqrt(sigma)` with sigma measured through the object; exact for the
    /// differential estimators at any absorption.
    pub fn predicted_ratio_object(&self) -> f64 {
        1.0 / self.sigma_object.sqrt()
    }
}

/// Superpixel side of the comparison runs.
pub const SNR_BIN: usize = 8;
/// Object region side in superpixels; one superpixel of margin surrounds it.
pub const SNR_REGION: usize = 17;
/// Coherence size of the comparison twin source, well below the superpixel.
pub const SNR_COHERENCE: f64 = 0.25;
const SNR_TEMPORAL_MODES: u32 = 10;
const MIN_SNR_SHOTS: usize = 10;

/// A matched twin-beam and coherent-light imaging experiment.
#[derive(Clone, Copy, Debug)]
pub struct ComparisonSetup<'a> {
    /// Object-free twin source.
    pub source: &'a SourceConfig,
    /// Shared by both light sources.
    pub detector: &'a Detector,
    pub mask: &'a ObjectMask,
    /// Object region in superpixels.
    pub region: Region,
    pub center: Displacement,
    pub shots: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ImagingOutcome {
    pub comparison: SnrComparison,
    /// Twin-beam differential reconstruction.
    pub image: ReconstructedImage,
    /// Transmittance of each superpixel of the region.
    pub alpha_true: Vec<f64>,
}

/// Runs twin-beam differential, coherent differential and coherent direct
/// imaging of one object at the same detected flux. Each scheme is
/// calibrated on its own object-free shots; the coherent beams are Poisson
/// with the twin source's mean photon number per pixel.
pub fn run_comparison(setup: &ComparisonSetup<'_>) -> Result<ImagingOutcome> {
    if setup.shots < MIN_SNR_SHOTS {
        return Err(Error::Imaging(format!(
            "{} shots are too few for a stable deviation (need {MIN_SNR_SHOTS})",
            setup.shots
        )));
    }
    let src = setup.source;
    let det = setup.detector;
    let bin = det.config().bin;
    let with_object = apply_object(src, setup.mask.clone())?;
    let per_pixel = src.mean_pairs_per_pixel();

    let n = setup.shots as u64;
    let seed = setup.seed;
    let campaign =
        |first: u64, make: &(dyn Fn(u64) -> Result<ShotPair> + Sync)| -> Result<Vec<ShotPair>> {
            (0..n)
                .into_par_iter()
                .map(|k| make(shot_seed(seed, first + k)))
                .collect()
        };
    let twin_cal = campaign(0, &|s| simulate_twin_pair(src, det, s))?;
    let twin_obj = campaign(n, &|s| simulate_twin_pair(&with_object, det, s))?;
    let coh_cal = campaign(2 * n, &|s| coherent_with_object(per_pixel, det, None, s))?;
    let coh_obj = campaign(3 * n, &|s| {
        coherent_with_object(per_pixel, det, Some(setup.mask), s)
    })?;

    let roi = crate::simulator::readout_region(src.grid, bin)?;
    let cropped = Frame::new(
        src.grid.width,
        src.grid.height,
        1.0,
        setup.mask.alpha().to_vec(),
    )?;
    let cropped = crate::frames::extract_region(&cropped, roi)?;
    let cropped = ObjectMask::new(cropped.width(), cropped.height(), cropped.into_data())?;
    let alpha_true = superpixel_alpha(&cropped, bin.factor, setup.region)?;
    // with no covered superpixel there is no signal and every SNR is zero
    let select: Vec<bool> = alpha_true.iter().map(|a| *a < 1.0).collect();
    let covered = select.iter().any(|v| *v);
    let geometry = |estimator| ImagingGeometry {
        region: setup.region,
        center: setup.center,
        bin,
        estimator,
    };
    let twin_image = reconstruct(
        &twin_obj,
        &calibrate(&twin_cal)?,
        &geometry(Estimator::Differential),
    )?;
    let coh_calibration = calibrate(&coh_cal)?;
    let snr = |image: &ReconstructedImage| {
        if covered {
            image.snr(&select)
        } else {
            Ok((0.0, 0.0))
        }
    };
    let q = snr(&twin_image)?;
    let cd = snr(&reconstruct(
        &coh_obj,
        &coh_calibration,
        &geometry(Estimator::Differential),
    )?)?;
    let direct = snr(&reconstruct(
        &coh_obj,
        &coh_calibration,
        &geometry(Estimator::Direct),
    )?)?;

    let spec = AnalysisSpec::new(setup.region, 0).at_nominal_center();
    let (dx, dy) = (
        setup.center.dx.round() as i64,
        setup.center.dy.round() as i64,
    );
    let mean_sigma = |shots: &[ShotPair]| -> Result<f64> {
        let v: Vec<f64> = shots
            .iter()
            .map(|s| {
                let refl = Reflection::of(&s.idler);
                let refl = Reflection {
                    sum_x: refl.sum_x + dx,
                    sum_y: refl.sum_y + dy,
                };
                let spec = AnalysisSpec {
                    reflection: Some(refl),
                    ..spec
                };
                analyze_pair(&s.signal, &s.idler, &spec, 0, None).map(|a| a.report.sigma)
            })
            .collect::<Result<_>>()?;
        Ok(mean_and_stderr(&v).0)
    };
    let flux: Vec<f64> = twin_cal
        .iter()
        .flat_map(|s| {
            setup
                .region
                .pixels()
                .map(|(x, y)| s.signal.get(x, y) as f64)
                .collect::<Vec<_>>()
        })
        .collect();
    let deficits: Vec<f64> = alpha_true
        .iter()
        .zip(&select)
        .filter(|(_, k)| **k)
        .map(|(a, _)| 1.0 - a)
        .collect();
    let sigma_twin = mean_sigma(&twin_cal)?;
    Ok(ImagingOutcome {
        comparison: SnrComparison {
            deficit: if covered {
                mean_and_stderr(&deficits).0
            } else {
                0.0
            },
            photon_flux: mean_and_stderr(&flux).0,
            sigma_target: sigma_twin,
            sigma_twin,
            sigma_object: mean_sigma(&twin_obj)?,
            snr_quantum: q.0,
            snr_quantum_se: q.1,
            snr_classical_differential: cd.0,
            snr_classical_differential_se: cd.1,
            snr_classical_direct: direct.0,
            snr_classical_direct_se: direct.1,
            shots: setup.shots,
        },
        image: twin_image,
        alpha_true,
    })
}

/// Compares the schemes on a uniform object of transmittance `1 - deficit`
/// at `flux` detected photoelectrons per 8x8 superpixel, with a noiseless
/// twin source whose detection efficiency gives `sigma_measured`.
pub fn snr_compare(
    deficit: f64,
    flux: f64,
    sigma_measured: f64,
    shots: usize,
    seed: u64,
) -> Result<SnrComparison> {
    if !(deficit > 0.0 && deficit <= 1.0) {
        return Err(Error::Imaging(format!(
            "deficit must lie in (0, 1], got {deficit}"
        )));
    }
    if !(flux > 0.0 && flux.is_finite()) {
        return Err(Error::Imaging(format!("flux must be positive, got {flux}")));
    }
    let eta = theory::efficiency_for_sigma(sigma_measured, SNR_BIN as f64, SNR_COHERENCE);
    let reachable = 1.0 - theory::collection_probability(SNR_BIN as f64, SNR_COHERENCE);
    if !(sigma_measured > reachable && sigma_measured < 1.0) || eta <= 0.0 {
        return Err(Error::Imaging(format!(
            "sigma {sigma_measured} is outside the twin source range ({reachable:.3}, 1)"
        )));
    }

    let side = (SNR_REGION + 2) * SNR_BIN;
    let grid = Grid::new(side, side, 20.0);
    let src = SourceConfig {
        grid,
        temporal_modes: SNR_TEMPORAL_MODES,
        coherence_fwhm: SNR_COHERENCE,
        ..SourceConfig::default()
    }
    .with_detected_flux(flux / (SNR_BIN * SNR_BIN) as f64, eta);
    let det = Detector::new(
        DetectorConfig {
            bin: BinMode::hardware(SNR_BIN),
            ..DetectorConfig::noiseless(eta)
        },
        grid,
    )?;
    let mask = ObjectMask::uniform(side, side, (1.0 - deficit) as f32)?;
    let outcome = run_comparison(&ComparisonSetup {
        source: &src,
        detector: &det,
        mask: &mask,
        region: Region::new(1, 1, SNR_REGION, SNR_REGION),
        center: Displacement::ZERO,
        shots,
        seed,
    })?;
    Ok(SnrComparison {
        deficit,
        photon_flux: flux,
        sigma_target: sigma_measured,
        ..outcome.comparison
    })
}

pub const SNR_HEADER: [&str; 17] = [
    "deficit",
    "photon_flux",
    "shots",
    "sigma_target",
    "sigma_twin",
    "sigma_object",
    "snr_quantum",
    "snr_quantum_se",
    "snr_classical_differential",
    "snr_classical_differential_se",
    "snr_classical_direct",
    "snr_classical_direct_se",
    "ratio",
    "ratio_se",
    "predicted_ratio",
    "predicted_ratio_object",
    "ratio_ge_1_10",
];

pub fn write_snr_csv<W: Write>(out: W, rows: &[SnrComparison]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SNR_HEADER)?;
    for c in rows {
        let (r, se) = c.ratio();
        w.write_record([
            c.deficit.to_string(),
            c.photon_flux.to_string(),
            c.shots.to_string(),
            c.sigma_target.to_string(),
            c.sigma_twin.to_string(),
            c.sigma_object.to_string(),
            c.snr_quantum.to_string(),
            c.snr_quantum_se.to_string(),
            c.snr_classical_differential.to_string(),
            c.snr_classical_differential_se.to_string(),
            c.snr_classical_direct.to_string(),
            c.snr_classical_direct_se.to_string(),
            r.to_string(),
            se.to_string(),
            c.predicted_ratio().to_string(),
            c.predicted_ratio_object().to_string(),
            (r >= 1.10).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
