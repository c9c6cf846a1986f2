//! Twin-beam, coherent-control and background frame generation.
//!
//! The twin source is a discrete coherence-cell model. The beam half is
//! tiled into square cells of side `coherence_fwhm`; each cell emits a
//! multi-thermal number of pairs. Each pair puts its signal photon uniformly
//! inside the cell and its idler photon at the point reflection of that
//! position, shifted by the center offset plus Gaussian jitter of FWHM
//! `coherence_fwhm`. Photons are then thinned by the per-pixel efficiency,
//! diffuse background is added, and the frame is read out with optional
//! binning.
//!
//! Every shot draws from independent ChaCha8 streams derived from its seed,
//! one per stage, so changing the detector noise leaves the photon pattern
//! of a seed untouched.

mod config;
pub mod theory;
pub mod thermal;

pub use config::{
    apply_object, replica, DetectorConfig, Grid, ObjectMask, SourceConfig, PLACEMENT_QUANTUM,
    REPLICA_SUPERPIXEL_READ_NOISE,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::frames::{
    bin_frame, block_mean, extract_region, BinKind, BinMode, Displacement, Frame, Region,
};

const STREAM_PAIRS: u64 = 1;
const STREAM_THIN_SIGNAL: u64 = 2;
const STREAM_THIN_IDLER: u64 = 3;
const STREAM_BACKGROUND_SIGNAL: u64 = 4;
const STREAM_BACKGROUND_IDLER: u64 = 5;
const STREAM_READ_SIGNAL: u64 = 6;
const STREAM_READ_IDLER: u64 = 7;
const STREAM_EFFICIENCY_SIGNAL: u64 = 8;
const STREAM_EFFICIENCY_IDLER: u64 = 9;

/// Seed of shot `index` in a campaign rooted at `root` (SplitMix64 finalizer
/// over the pair).
pub fn shot_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Centered part of the grid read out under `bin`: the remainder of each
/// side not divisible by the bin factor is dropped evenly from both edges,
/// which keeps the reflection center of the two arms in place.
pub fn readout_region(grid: Grid, bin: BinMode) -> Result<Region> {
    bin.validate()?;
    let f = bin.factor;
    let (rx, ry) = (grid.width % f, grid.height % f);
    if rx % 2 != 0 || ry % 2 != 0 || grid.width < f || grid.height < f {
        return Err(Error::Binning(format!(
            "{}x{} grid cannot be cropped symmetrically to a multiple of {f}",
            grid.width, grid.height
        )));
    }
    Ok(Region::new(
        rx / 2,
        ry / 2,
        grid.width - rx,
        grid.height - ry,
    ))
}

/// Which half of the sensor a frame belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Signal,
    Idler,
}

/// A detector with its frozen per-pixel efficiency maps.
#[derive(Clone, Debug)]
pub struct Detector {
    config: DetectorConfig,
    grid: Grid,
    signal_eff: Vec<f32>,
    idler_eff: Vec<f32>,
}

impl Detector {
    pub fn new(config: DetectorConfig, grid: Grid) -> Result<Self> {
        config.validate()?;
        grid.validate()?;
        let map = |eta: f64, s: u64| -> Vec<f32> {
            if config.eta_sigma == 0.0 {
                return vec![eta as f32; grid.len()];
            }
            let mut rng = stream(config.efficiency_seed, s);
            let noise = Normal::new(0.0, config.eta_sigma).unwrap();
            (0..grid.len())
                .map(|_| (eta * (1.0 + noise.sample(&mut rng))).clamp(0.0, 1.0) as f32)
                .collect()
        };
        let signal_eff = map(config.eta, STREAM_EFFICIENCY_SIGNAL);
        let idler_eff = map(config.idler_efficiency(), STREAM_EFFICIENCY_IDLER);
        Ok(Self {
            config,
            grid,
            signal_eff,
            idler_eff,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn efficiency(&self, arm: Arm) -> &[f32] {
        match arm {
            Arm::Signal => &self.signal_eff,
            Arm::Idler => &self.idler_eff,
        }
    }

    /// Per-pixel efficiency relative to the nominal one, as a frame; the
    /// flat-field a calibration would measure.
    pub fn relative_gain(&self, arm: Arm) -> Frame {
        let nominal = match arm {
            Arm::Signal => self.config.eta,
            Arm::Idler => self.config.idler_efficiency(),
        };
        let data = self
            .efficiency(arm)
            .iter()
            .map(|e| {
                if nominal > 0.0 {
                    (*e as f64 / nominal) as f32
                } else {
                    1.0
                }
            })
            .collect();
        Frame::new(
            self.grid.width,
            self.grid.height,
            self.grid.pixel_pitch,
            data,
        )
        .expect("grid validated")
    }

    /// Relative gain averaged over the superpixels of the read-out frames.
    pub fn binned_gain(&self, arm: Arm) -> Result<Frame> {
        let roi = readout_region(self.grid, self.config.bin)?;
        block_mean(
            &extract_region(&self.relative_gain(arm), roi)?,
            self.config.bin.factor,
        )
    }

    /// Same frozen efficiency maps, different noise settings.
    pub fn with_noise(&self, read_noise: f64, background_mean: f64, bin: BinMode) -> Result<Self> {
        let config = DetectorConfig {
            read_noise,
            background_mean,
            bin,
            ..self.config.clone()
        };
        config.validate()?;
        Ok(Self {
            config,
            ..self.clone()
        })
    }
}

/// Generation record of one shot.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotTruth {
    pub seed: u64,
    /// Pairs generated; equals the generated photons in each arm. Zero for
    /// coherent-light shots.
    pub pair_count: u64,
    /// Idler photons whose position fell outside the grid.
    pub idler_dropped: u64,
    pub center_offset: Displacement,
}

/// Detected photon counts per fine pixel, before background and read-out.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonPair {
    pub grid: Grid,
    pub signal: Vec<u32>,
    pub idler: Vec<u32>,
    pub truth: ShotTruth,
    /// Generated (pre-thinning) photons that landed on each grid.
    pub generated_signal: u64,
    pub generated_idler: u64,
}

pub const TRUTH_HEADER: [&str; 6] = [
    "shot",
    "seed",
    "pair_count",
    "idler_dropped",
    "center_offset_x",
    "center_offset_y",
];

/// One row per shot, in shot order.
pub fn write_truth_csv<W: std::io::Write>(out: W, truths: &[ShotTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRUTH_HEADER)?;
    for (k, t) in truths.iter().enumerate() {
        w.write_record([
            k.to_string(),
            t.seed.to_string(),
            t.pair_count.to_string(),
            t.idler_dropped.to_string(),
            t.center_offset.dx.to_string(),
            t.center_offset.dy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotPair {
    pub signal: Frame,
    pub idler: Frame,
    pub truth: ShotTruth,
}

/// Places the pairs of one twin-beam shot and thins them with the
/// detector efficiency (and the object, when present).
pub fn twin_photons(src: &SourceConfig, det: &Detector, seed: u64) -> Result<PhotonPair> {
    src.validate()?;
    let grid = src.grid;
    if grid != det.grid {
        return Err(Error::Config(format!(
            "detector grid {:?} does not match source grid {:?}",
            det.grid, grid
        )));
    }
    let (w, h) = (grid.width, grid.height);
    let (wf, hf) = (w as f64, h as f64);
    let side = src.cell_side();
    let jitter = src.coherence_fwhm / theory::FWHM_PER_SIGMA;
    let (ox, oy) = (src.center_offset.dx, src.center_offset.dy);

    let mut raw_s = vec![0u32; grid.len()];
    let mut raw_i = vec![0u32; grid.len()];
    let mut rng = stream(seed, STREAM_PAIRS);
    let mut pairs = 0u64;
    let mut dropped = 0u64;

    let cells_x = (wf / side).ceil() as usize;
    let cells_y = (hf / side).ceil() as usize;
    for cy in 0..cells_y {
        let y0 = cy as f64 * side;
        let ch = (hf - y0).min(side);
        for cx in 0..cells_x {
            let x0 = cx as f64 * side;
            let cw = (wf - x0).min(side);
            let area_frac = (cw * ch) / (side * side);
            let k = thermal::multithermal(&mut rng, src.temporal_modes, src.mu * area_frac);
            pairs += k;
            for _ in 0..k {
                let x = x0 + rng.gen::<f64>() * cw;
                let y = y0 + rng.gen::<f64>() * ch;
                let (xs, ys) = ((x as usize).min(w - 1), (y as usize).min(h - 1));
                raw_s[ys * w + xs] += 1;
                let jx: f64 = rng.sample(StandardNormal);
                let jy: f64 = rng.sample(StandardNormal);
                let xi = wf - x + ox + jitter * jx;
                let yi = hf - y + oy + jitter * jy;
                if xi >= 0.0 && xi < wf && yi >= 0.0 && yi < hf {
                    raw_i[yi as usize * w + xi as usize] += 1;
                } else {
                    dropped += 1;
                }
            }
        }
    }

    let generated_signal = raw_s.iter().map(|&v| v as u64).sum();
    let generated_idler = raw_i.iter().map(|&v| v as u64).sum();
    let alpha = src.object.as_ref().map(|m| m.alpha());
    let signal = thin_counts(
        &raw_s,
        det.efficiency(Arm::Signal),
        alpha,
        &mut stream(seed, STREAM_THIN_SIGNAL),
    );
    let idler = thin_counts(
        &raw_i,
        det.efficiency(Arm::Idler),
        None,
        &mut stream(seed, STREAM_THIN_IDLER),
    );
    Ok(PhotonPair {
        grid,
        signal,
        idler,
        truth: ShotTruth {
            seed,
            pair_count: pairs,
            idler_dropped: dropped,
            center_offset: src.center_offset,
        },
        generated_signal,
        generated_idler,
    })
}

fn thin_counts(raw: &[u32], eff: &[f32], alpha: Option<&[f32]>, rng: &mut ChaCha8Rng) -> Vec<u32> {
    raw.iter()
        .enumerate()
        .map(|(i, &n)| {
            let p = eff[i] as f64 * alpha.map_or(1.0, |a| a[i] as f64);
            thermal::thin(rng, n as u64, p) as u32
        })
        .collect()
}

/// Adds background, bins and applies read noise to one arm.
fn read_out(photons: &[u32], det: &Detector, seed: u64, arm: Arm) -> Result<Frame> {
    let cfg = &det.config;
    let grid = det.grid;
    let (bg_stream, read_stream) = match arm {
        Arm::Signal => (STREAM_BACKGROUND_SIGNAL, STREAM_READ_SIGNAL),
        Arm::Idler => (STREAM_BACKGROUND_IDLER, STREAM_READ_IDLER),
    };
    let mut bg = stream(seed, bg_stream);
    let counts: Vec<f32> = photons
        .iter()
        .map(|&n| (n as u64 + thermal::poisson(&mut bg, cfg.background_mean)) as f32)
        .collect();
    let mut frame = Frame::photon_counts(grid.width, grid.height, grid.pixel_pitch, counts)?;
    let roi = readout_region(grid, cfg.bin)?;
    if roi != frame.region() {
        frame = extract_region(&frame, roi)?;
    }

    let mut read = stream(seed, read_stream);
    let noise = |frame: Frame, rng: &mut ChaCha8Rng| -> Frame {
        let (w, h, pitch) = (frame.width(), frame.height(), frame.pixel_pitch());
        let mut data = frame.into_data();
        if cfg.read_noise > 0.0 {
            for v in data.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v = (*v as f64 + cfg.read_noise * g) as f32;
            }
        }
        Frame::new(w, h, pitch, data).expect("shape preserved")
    };
    Ok(match cfg.bin.kind {
        BinKind::Hardware => noise(bin_frame(&frame, cfg.bin, false)?, &mut read),
        BinKind::Software => bin_frame(&noise(frame, &mut read), cfg.bin, false)?,
    })
}

/// Reads out a photon pair through the detector's noise and binning stages.
pub fn detect(photons: &PhotonPair, det: &Detector) -> Result<ShotPair> {
    let seed = photons.truth.seed;
    Ok(ShotPair {
        signal: read_out(&photons.signal, det, seed, Arm::Signal)?,
        idler: read_out(&photons.idler, det, seed, Arm::Idler)?,
        truth: photons.truth.clone(),
    })
}

/// One twin-beam shot.
pub fn simulate_twin_pair(src: &SourceConfig, det: &Detector, seed: u64) -> Result<ShotPair> {
    detect(&twin_photons(src, det, seed)?, det)
}

/// Two independent Poisson beams of `mean_per_pixel` incident photons per
/// pixel, detected like a twin-beam shot. The shot-noise reference.
pub fn simulate_coherent_pair(mean_per_pixel: f64, det: &Detector, seed: u64) -> Result<ShotPair> {
    if !(mean_per_pixel >= 0.0 && mean_per_pixel.is_finite()) {
        return Err(Error::Config(format!(
            "coherent mean must be >= 0, got {mean_per_pixel}"
        )));
    }
    coherent_with_object(mean_per_pixel, det, None, seed)
}

/// Coherent pair with an optional object in the signal beam.
pub fn coherent_with_object(
    mean_per_pixel: f64,
    det: &Detector,
    object: Option<&ObjectMask>,
    seed: u64,
) -> Result<ShotPair> {
    let grid = det.grid;
    if let Some(m) = object {
        if m.width() != grid.width || m.height() != grid.height {
            return Err(Error::Config(
                "object mask does not match detector grid".into(),
            ));
        }
    }
    let draw = |eff: &[f32], alpha: Option<&[f32]>, s: u64| -> Vec<u32> {
        let mut rng = stream(seed, s);
        eff.iter()
            .enumerate()
            .map(|(i, e)| {
                let a = alpha.map_or(1.0, |a| a[i] as f64);
                thermal::poisson(&mut rng, mean_per_pixel * *e as f64 * a) as u32
            })
            .collect()
    };
    let photons = PhotonPair {
        grid,
        signal: draw(
            det.efficiency(Arm::Signal),
            object.map(|m| m.alpha()),
            STREAM_THIN_SIGNAL,
        ),
        idler: draw(det.efficiency(Arm::Idler), None, STREAM_THIN_IDLER),
        truth: ShotTruth {
            seed,
            pair_count: 0,
            idler_dropped: 0,
            center_offset: Displacement::ZERO,
        },
        generated_signal: 0,
        generated_idler: 0,
    };
    detect(&photons, det)
}

/// A frame with the down-converted light suppressed: diffuse background and
/// read noise only.
pub fn simulate_background_frame(det: &Detector, seed: u64) -> Result<Frame> {
    let zeros = vec![0u32; det.grid.len()];
    read_out(&zeros, det, seed, Arm::Signal)
}

/// Background frames of both arms.
pub fn simulate_background_pair(det: &Detector, seed: u64) -> Result<(Frame, Frame)> {
    let zeros = vec![0u32; det.grid.len()];
    Ok((
        read_out(&zeros, det, seed, Arm::Signal)?,
        read_out(&zeros, det, seed, Arm::Idler)?,
    ))
}

#[cfg(test)]
mod tests;
