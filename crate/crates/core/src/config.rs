//! Run configuration as flat `key = value` text.
//!
//! One key per line; `#` starts a comment. Keys mirror the fields of
//! [`SourceConfig`], [`DetectorConfig`] and the analysis parameters. Every
//! key is optional and falls back to the default configuration; unknown or
//! repeated keys are errors reported with their line number.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::SubpixelMethod;
use crate::frames::{BinKind, BinMode, Displacement, Region};
use crate::simulator::{readout_region, DetectorConfig, SourceConfig};

/// Analysis parameters applied to every shot.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    /// Signal region in analysis-frame units; centered when absent.
    pub region: Option<Region>,
    /// Half-width of the displacement window.
    pub window: usize,
    /// Divide frames by the known relative efficiency before analysis.
    pub flat_field: bool,
    pub subpixel: SubpixelMethod,
    /// Record a background frame per shot and report corrected figures.
    pub background_correction: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            region: None,
            window: 2,
            flat_field: true,
            subpixel: SubpixelMethod::Paraboloid,
            background_correction: false,
        }
    }
}

impl AnalysisConfig {
    /// The configured region, or the largest centered square leaving one
    /// pixel of margin outside the window on each side.
    pub fn region_for(&self, width: usize, height: usize) -> Result<Region> {
        if let Some(r) = self.region {
            return Ok(r);
        }
        let margin = 2 * (self.window + 1);
        let side = width
            .min(height)
            .checked_sub(margin)
            .filter(|s| *s >= 2)
            .ok_or_else(|| {
                Error::Config(format!(
                    "a {width}x{height} frame leaves no region for a radius-{} window",
                    self.window
                ))
            })?;
        Ok(Region::centered(width, height, side, side))
    }
}

/// Everything one command needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub source: SourceConfig,
    pub detector: DetectorConfig,
    pub analysis: AnalysisConfig,
    pub shots: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// TBF file with the object transmittance, for imaging runs.
    pub object_mask: Option<PathBuf>,
    /// Transmittance deficit of the default disc object when no mask file
    /// is given.
    pub object_deficit: f64,
    /// Disc radius of the default object, in pixels.
    pub object_radius: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: SourceConfig::default(),
            detector: DetectorConfig::default(),
            analysis: AnalysisConfig::default(),
            shots: 1,
            seed: 0,
            output: None,
            object_mask: None,
            object_deficit: 0.1,
            object_radius: 48.0,
        }
    }
}

fn parse<T: FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} as {what}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

/// Parses `WxH+X+Y`.
pub fn parse_region(value: &str) -> std::result::Result<Region, String> {
    let bad = || format!("region must look like 17x17+3+3, got {value:?}");
    let (size, rest) = value.split_once('+').ok_or_else(bad)?;
    let (x0, y0) = rest.split_once('+').ok_or_else(bad)?;
    let (w, h) = size.split_once('x').ok_or_else(bad)?;
    let n = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    Ok(Region::new(n(x0)?, n(y0)?, n(w)?, n(h)?))
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        let mut flux = None;
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let err = |reason: String| Error::ConfigLine { line, reason };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("key {key:?} given twice")));
            }
            cfg.set(key, value, &mut flux).map_err(err)?;
        }
        if let Some(f) = flux {
            if seen.contains("mu") {
                return Err(Error::Config(
                    "set either mu or detected_flux, not both".into(),
                ));
            }
            cfg.source = cfg.source.clone().with_detected_flux(f, cfg.detector.eta);
        }
        if !seen.contains("coherence_fwhm") {
            cfg.source = cfg.source.clone().with_derived_coherence();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(
        &mut self,
        key: &str,
        value: &str,
        flux: &mut Option<f64>,
    ) -> std::result::Result<(), String> {
        let s = &mut self.source;
        let d = &mut self.detector;
        let a = &mut self.analysis;
        match key {
            "width" => s.grid.width = parse(value, "an integer")?,
            "height" => s.grid.height = parse(value, "an integer")?,
            "pixel_pitch" => s.grid.pixel_pitch = parse(value, "a number")?,
            "mu" => s.mu = parse(value, "a number")?,
            "detected_flux" => *flux = Some(parse(value, "a number")?),
            "temporal_modes" => s.temporal_modes = parse(value, "an integer")?,
            "coherence_fwhm" => s.coherence_fwhm = parse(value, "a number")?,
            "center_offset_x" => s.center_offset.dx = parse(value, "a number")?,
            "center_offset_y" => s.center_offset.dy = parse(value, "a number")?,
            "pump_waist" => s.pump_waist = Some(parse(value, "a number")?),
            "wavelength" => s.wavelength = Some(parse(value, "a number")?),
            "focal_length" => s.focal_length = Some(parse(value, "a number")?),
            "eta" => d.eta = parse(value, "a number")?,
            "idler_eta" => d.idler_eta = Some(parse(value, "a number")?),
            "eta_sigma" => d.eta_sigma = parse(value, "a number")?,
            "read_noise" => d.read_noise = parse(value, "a number")?,
            "background_mean" => d.background_mean = parse(value, "a number")?,
            "bin" => d.bin.factor = parse(value, "an integer")?,
            "bin_kind" => {
                d.bin.kind = match value {
                    "hardware" => BinKind::Hardware,
                    "software" => BinKind::Software,
                    _ => {
                        return Err(format!(
                            "bin_kind must be hardware or software, got {value:?}"
                        ))
                    }
                }
            }
            "efficiency_seed" => d.efficiency_seed = parse(value, "a u64")?,
            "region" => a.region = Some(parse_region(value)?),
            "window" => a.window = parse(value, "an integer")?,
            "flat_field" => a.flat_field = parse_bool(value)?,
            "background_correction" => a.background_correction = parse_bool(value)?,
            "subpixel" => {
                a.subpixel = match value {
                    "paraboloid" => SubpixelMethod::Paraboloid,
                    "centroid" => SubpixelMethod::Centroid,
                    "gaussian" => SubpixelMethod::Gaussian,
                    _ => {
                        return Err(format!(
                            "subpixel must be paraboloid, centroid or gaussian, got {value:?}"
                        ))
                    }
                }
            }
            "shots" => self.shots = parse(value, "an integer")?,
            "seed" => self.seed = parse(value, "a u64")?,
            "output" => self.output = Some(PathBuf::from(value)),
            "object_mask" => self.object_mask = Some(PathBuf::from(value)),
            "object_deficit" => self.object_deficit = parse(value, "a number")?,
            "object_radius" => self.object_radius = parse(value, "a number")?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.detector.validate()?;
        if self.shots == 0 {
            return Err(Error::Config("shots must be >= 1".into()));
        }
        let roi = readout_region(self.source.grid, self.detector.bin)
            .map_err(|e| Error::Config(e.to_string()))?;
        let f = self.detector.bin.factor;
        let (width, height) = (roi.width, roi.height);
        if !(0.0..=1.0).contains(&self.object_deficit) {
            return Err(Error::Config(format!(
                "object_deficit must lie in [0, 1], got {}",
                self.object_deficit
            )));
        }
        self.analysis.region_for(width / f, height / f)?;
        Ok(())
    }

    /// The reference replica setup: 8x8 hardware binning with its superpixel
    /// read noise, 3% efficiency spread, flat-fielded analysis.
    pub fn replica() -> Self {
        let (source, mut detector) = crate::simulator::replica();
        detector.bin = BinMode::hardware(8);
        detector.read_noise = crate::simulator::REPLICA_SUPERPIXEL_READ_NOISE;
        Self {
            source,
            detector,
            analysis: AnalysisConfig {
                region: Some(Region::new(3, 3, 17, 17)),
                ..AnalysisConfig::default()
            },
            ..Self::default()
        }
    }

    /// Effective configuration with every key spelled out. Parsing it back
    /// yields an identical configuration.
    pub fn to_text(&self) -> String {
        let s = &self.source;
        let d = &self.detector;
        let a = &self.analysis;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(out, "{k} = {v}").unwrap();
        };
        kv("width", s.grid.width.to_string());
        kv("height", s.grid.height.to_string());
        kv("pixel_pitch", s.grid.pixel_pitch.to_string());
        kv("mu", s.mu.to_string());
        kv("temporal_modes", s.temporal_modes.to_string());
        kv("coherence_fwhm", s.coherence_fwhm.to_string());
        kv("center_offset_x", s.center_offset.dx.to_string());
        kv("center_offset_y", s.center_offset.dy.to_string());
        if let Some(v) = s.pump_waist {
            kv("pump_waist", v.to_string());
        }
        if let Some(v) = s.wavelength {
            kv("wavelength", v.to_string());
        }
        if let Some(v) = s.focal_length {
            kv("focal_length", v.to_string());
        }
        kv("eta", d.eta.to_string());
        if let Some(v) = d.idler_eta {
            kv("idler_eta", v.to_string());
        }
        kv("eta_sigma", d.eta_sigma.to_string());
        kv("read_noise", d.read_noise.to_string());
        kv("background_mean", d.background_mean.to_string());
        kv("bin", d.bin.factor.to_string());
        kv(
            "bin_kind",
            match d.bin.kind {
                BinKind::Hardware => "hardware",
                BinKind::Software => "software",
            }
            .into(),
        );
        kv("efficiency_seed", d.efficiency_seed.to_string());
        if let Some(r) = a.region {
            kv("region", r.to_string());
        }
        kv("window", a.window.to_string());
        kv("flat_field", a.flat_field.to_string());
        kv("background_correction", a.background_correction.to_string());
        kv(
            "subpixel",
            match a.subpixel {
                SubpixelMethod::Paraboloid => "paraboloid",
                SubpixelMethod::Centroid => "centroid",
                SubpixelMethod::Gaussian => "gaussian",
            }
            .into(),
        );
        kv("shots", self.shots.to_string());
        kv("seed", self.seed.to_string());
        if let Some(p) = &self.output {
            kv("output", p.display().to_string());
        }
        if let Some(p) = &self.object_mask {
            kv("object_mask", p.display().to_string());
        }
        kv("object_deficit", self.object_deficit.to_string());
        kv("object_radius", self.object_radius.to_string());
        out
    }

    pub fn center_offset(&self) -> Displacement {
        self.source.center_offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(
            RunConfig::parse("# nothing\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn keys_and_comments() {
        let cfg = RunConfig::parse(
            "eta = 0.5   # idler follows\nbin = 4\nbin_kind = software\nregion = 10x12+1+2\nshots=3\n",
        )
        .unwrap();
        assert_eq!(cfg.detector.eta, 0.5);
        assert_eq!(cfg.detector.bin, BinMode::software(4));
        assert_eq!(cfg.analysis.region, Some(Region::new(1, 2, 10, 12)));
        assert_eq!(cfg.shots, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::parse("eta = 0.5\n\nfoo = 1\n").unwrap_err();
        assert!(matches!(e, Error::ConfigLine { line: 3, .. }), "{e}");
        let e = RunConfig::parse("eta = 0.5\neta = 0.6\n").unwrap_err();
        assert!(matches!(e, Error::ConfigLine { line: 2, .. }));
        let e = RunConfig::parse("read_noise = four\n").unwrap_err();
        assert!(matches!(e, Error::ConfigLine { line: 1, .. }));
        assert!(RunConfig::parse("just words\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("eta = 1.5\n").is_err());
        assert!(RunConfig::parse("shots = 0\n").is_err());
        assert!(RunConfig::parse("bin = 3\n").is_err());
        assert!(RunConfig::parse("bin = 12\n").is_ok());
        assert!(RunConfig::parse("mu = 1\ndetected_flux = 600\n").is_err());
    }

    #[test]
    fn detected_flux_sets_mu() {
        let cfg = RunConfig::parse("detected_flux = 150\neta = 0.5\n").unwrap();
        assert!((cfg.source.mean_pairs_per_pixel() * 0.5 - 150.0).abs() < 1e-9);
    }

    #[test]
    fn optics_derive_the_coherence_size() {
        let cfg =
            RunConfig::parse("pump_waist = 1000\nwavelength = 710\nfocal_length = 80\n").unwrap();
        assert!((cfg.source.coherence_fwhm - 2.84).abs() < 1e-9);
        let pinned = RunConfig::parse(
            "pump_waist = 1000\nwavelength = 710\nfocal_length = 80\ncoherence_fwhm = 8\n",
        )
        .unwrap();
        assert_eq!(pinned.source.coherence_fwhm, 8.0);
    }

    #[test]
    fn replica_round_trips() {
        let cfg = RunConfig::replica();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn default_region_is_centered() {
        let a = AnalysisConfig {
            window: 2,
            ..AnalysisConfig::default()
        };
        assert_eq!(a.region_for(23, 23).unwrap(), Region::new(3, 3, 17, 17));
        assert!(a.region_for(6, 6).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(
            mu in 0.0f64..5.0,
            eta in 0.0f64..=1.0,
            read in 0.0f64..20.0,
            seed in any::<u64>(),
            shots in 1usize..500,
            dx in -3.0f64..3.0,
        ) {
            let mut cfg = RunConfig::default();
            cfg.source.mu = mu;
            cfg.source.center_offset.dx = dx;
            cfg.detector.eta = eta;
            cfg.detector.read_noise = read;
            cfg.seed = seed;
            cfg.shots = shots;
            prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }
}
