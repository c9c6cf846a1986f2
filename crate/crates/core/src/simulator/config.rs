use crate::error::{Error, Result};
use crate::frames::{BinMode, Displacement};

/// Pixel grid of one beam half.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    /// Micrometers.
    pub pixel_pitch: f64,
}

impl Grid {
    pub const fn new(width: usize, height: usize, pixel_pitch: f64) -> Self {
        Self {
            width,
            height,
            pixel_pitch,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "zero-area grid {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return Err(Error::Config(format!(
                "pixel_pitch must be positive, got {}",
                self.pixel_pitch
            )));
        }
        Ok(())
    }
}

/// Smallest coherence cell the photon placement can resolve, in pixels.
pub const PLACEMENT_QUANTUM: f64 = 1.0 / 16.0;

/// Per-pixel transmittance of an absorbing object placed in the signal arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    width: usize,
    height: usize,
    alpha: Vec<f32>,
}

impl ObjectMask {
    pub fn new(width: usize, height: usize, alpha: Vec<f32>) -> Result<Self> {
        if alpha.len() != width * height {
            return Err(Error::Config(format!(
                "mask has {} entries, expected {}x{}",
                alpha.len(),
                width,
                height
            )));
        }
        if let Some(bad) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Config(format!(
                "mask transmittance {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            alpha,
        })
    }

    pub fn uniform(width: usize, height: usize, alpha: f32) -> Result<Self> {
        Self::new(width, height, vec![alpha; width * height])
    }

    /// Disc of transmittance `alpha` (1 elsewhere) centered on the grid.
    pub fn disc(width: usize, height: usize, radius: f64, alpha: f32) -> Result<Self> {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| {
                let d = (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy);
                if d < radius {
                    alpha
                } else {
                    1.0
                }
            })
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }
}

/// Twin-beam source parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceConfig {
    pub grid: Grid,
    /// Mean photon pairs per mode (dimensionless).
    pub mu: f64,
    /// Number of temporal modes per coherence cell.
    pub temporal_modes: u32,
    /// Coherence cell side and pair-position jitter FWHM, in pixels.
    pub coherence_fwhm: f64,
    /// Sub-pixel offset of the idler symmetry center.
    pub center_offset: Displacement,
    /// Micrometers.
    pub pump_waist: Option<f64>,
    /// Nanometers.
    pub wavelength: Option<f64>,
    /// Millimeters.
    pub focal_length: Option<f64>,
    pub object: Option<ObjectMask>,
}

impl Default for SourceConfig {
    /// 600 detected photoelectrons per pixel at 67% efficiency, 8 px coherence cells.
    fn default() -> Self {
        Self {
            grid: Grid::new(184, 184, 20.0),
            mu: 0.627,
            temporal_modes: 91_400,
            coherence_fwhm: 8.0,
            center_offset: Displacement::ZERO,
            pump_waist: None,
            wavelength: None,
            focal_length: None,
            object: None,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        if self.temporal_modes == 0 {
            return Err(Error::Config("temporal_modes must be >= 1".into()));
        }
        if !(self.coherence_fwhm > 0.0 && self.coherence_fwhm.is_finite()) {
            return Err(Error::Config(format!(
                "coherence_fwhm must be positive, got {}",
                self.coherence_fwhm
            )));
        }
        if self.coherence_fwhm < PLACEMENT_QUANTUM {
            return Err(Error::Config(format!(
                "coherence cell {} px is smaller than the placement quantum {PLACEMENT_QUANTUM} px",
                self.coherence_fwhm
            )));
        }
        if let Some(mask) = &self.object {
            if mask.width != self.grid.width || mask.height != self.grid.height {
                return Err(Error::Config(format!(
                    "object mask {}x{} does not match grid {}x{}",
                    mask.width, mask.height, self.grid.width, self.grid.height
                )));
            }
        }
        Ok(())
    }

    /// Coherence size in pixels from pump waist, wavelength and lens focal
    /// length: `lambda * f / w_p` divided by the pixel pitch.
    pub fn derived_coherence(
        pump_waist_um: f64,
        wavelength_nm: f64,
        focal_length_mm: f64,
        pixel_pitch_um: f64,
    ) -> f64 {
        let length_um = (wavelength_nm * 1e-3) * (focal_length_mm * 1e3) / pump_waist_um;
        length_um / pixel_pitch_um
    }

    /// Replaces `coherence_fwhm` by the value derived from the optics, when
    /// all three optical parameters are set.
    pub fn with_derived_coherence(mut self) -> Self {
        if let (Some(w), Some(l), Some(f)) = (self.pump_waist, self.wavelength, self.focal_length) {
            self.coherence_fwhm = Self::derived_coherence(w, l, f, self.grid.pixel_pitch);
        }
        self
    }

    /// Side of one coherence cell in pixels. Below one pixel the cell is
    /// snapped to an integer fraction of a pixel so cells tile pixels exactly.
    pub fn cell_side(&self) -> f64 {
        if self.coherence_fwhm >= 1.0 {
            self.coherence_fwhm
        } else {
            1.0 / (1.0 / self.coherence_fwhm).round()
        }
    }

    /// Mean generated pairs per pixel.
    pub fn mean_pairs_per_pixel(&self) -> f64 {
        let side = self.cell_side();
        self.mu * self.temporal_modes as f64 / (side * side)
    }

    /// Sets `mu` so that a detector of efficiency `eta` records `flux`
    /// photoelectrons per pixel on average.
    pub fn with_detected_flux(mut self, flux: f64, eta: f64) -> Self {
        let side = self.cell_side();
        self.mu = flux * side * side / (eta * self.temporal_modes as f64);
        self
    }

    /// Degeneracy factor of a square detection bin of `bin_side` pixels.
    pub fn modes_per_bin(&self, bin_side: f64) -> f64 {
        let side = self.cell_side();
        (bin_side * bin_side) / (side * side) * self.temporal_modes as f64
    }
}

/// Wires an object into the signal arm of a source.
pub fn apply_object(src: &SourceConfig, mask: ObjectMask) -> Result<SourceConfig> {
    let out = SourceConfig {
        object: Some(mask),
        ..src.clone()
    };
    out.validate()?;
    Ok(out)
}

/// Detector parameters shared by both arms.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Mean transmission-detection efficiency.
    pub eta: f64,
    /// Idler arm efficiency when the arms are unbalanced; `None` means `eta`.
    pub idler_eta: Option<f64>,
    /// Relative standard deviation of the per-pixel efficiency.
    pub eta_sigma: f64,
    /// Read noise in photoelectrons per read.
    pub read_noise: f64,
    /// Diffuse background, photoelectrons per pixel per shot.
    pub background_mean: f64,
    pub bin: BinMode,
    /// Seed of the frozen efficiency map.
    pub efficiency_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            eta: 0.67,
            idler_eta: None,
            eta_sigma: 0.0,
            read_noise: 0.0,
            background_mean: 0.0,
            bin: BinMode::NONE,
            efficiency_seed: 0x05ee_de7a,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", Some(self.eta)), ("idler_eta", self.idler_eta)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
                }
            }
        }
        for (name, v) in [
            ("eta_sigma", self.eta_sigma),
            ("read_noise", self.read_noise),
            ("background_mean", self.background_mean),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        self.bin.validate()
    }

    pub fn idler_efficiency(&self) -> f64 {
        self.idler_eta.unwrap_or(self.eta)
    }

    pub fn noiseless(eta: f64) -> Self {
        Self {
            eta,
            ..Self::default()
        }
    }
}

/// Parameter set modelled on the reported setup: 67% efficiency, 8 px
/// coherence size, 4 e- read noise per pixel (9 e- per hardware superpixel),
/// 3% efficiency nonuniformity, and a diffuse background giving about 120 e-
/// mean and 200 e-^2 variance per 8x8 superpixel.
pub fn replica() -> (SourceConfig, DetectorConfig) {
    (
        SourceConfig::default(),
        DetectorConfig {
            eta: 0.67,
            idler_eta: None,
            eta_sigma: 0.03,
            read_noise: 4.0,
            background_mean: 120.0 / 64.0,
            bin: BinMode::NONE,
            efficiency_seed: 0x05ee_de7a,
        },
    )
}

/// Read noise per superpixel under hardware binning in the replica setup.
pub const REPLICA_SUPERPIXEL_READ_NOISE: f64 = 9.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_flux_is_600_per_pixel() {
        let src = SourceConfig::default();
        let detected = src.mean_pairs_per_pixel() * 0.67;
        assert!((detected - 600.0).abs() < 1.0, "{detected}");
    }

    #[test]
    fn derived_coherence_from_optics() {
        // 710 nm, f = 10 cm, w_p = 1.25 mm: lambda f / w_p = 56.8 um = 2.84 px of 20 um
        let px = SourceConfig::derived_coherence(1250.0, 710.0, 100.0, 20.0);
        assert!((px - 2.84).abs() < 1e-9);
        let src = SourceConfig {
            pump_waist: Some(1250.0),
            wavelength: Some(710.0),
            focal_length: Some(100.0),
            ..SourceConfig::default()
        }
        .with_derived_coherence();
        assert!((src.coherence_fwhm - 2.84).abs() < 1e-9);
    }

    #[test]
    fn source_validation() {
        let ok = SourceConfig::default();
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.grid.width = 0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.coherence_fwhm = 0.01;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.temporal_modes = 0;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.mu = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn detector_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let bad = DetectorConfig {
            eta: 1.2,
            ..DetectorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig {
            read_noise: -1.0,
            ..DetectorConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sub_pixel_cells_tile_pixels() {
        let src = SourceConfig {
            coherence_fwhm: 0.3,
            ..SourceConfig::default()
        };
        assert!((src.cell_side() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn object_masks() {
        assert!(ObjectMask::new(2, 1, vec![0.5, 1.5]).is_err());
        assert!(ObjectMask::new(2, 1, vec![0.5]).is_err());
        let d = ObjectMask::disc(8, 8, 2.0, 0.9).unwrap();
        assert_eq!(d.alpha().iter().filter(|a| **a < 1.0).count(), 12);
        let src = SourceConfig::default();
        assert!(apply_object(&src, ObjectMask::uniform(3, 3, 1.0).unwrap()).is_err());
        assert!(apply_object(&src, ObjectMask::uniform(184, 184, 0.9).unwrap()).is_ok());
    }
}
