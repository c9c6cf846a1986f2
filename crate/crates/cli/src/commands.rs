use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use twinbeam_core::config::RunConfig;
use twinbeam_core::estimators::{
    analyze_pair, find_minimum, mean_and_stderr, write_map_csv, write_report_csv, Analysis,
    AnalysisSpec, Background, CorrelationMap, NoiseReport,
};
use twinbeam_core::frames::{bin_frame, block_mean, flat_field, read_frame, write_frame};
use twinbeam_core::imaging::{run_comparison, write_image_csv, write_snr_csv, ComparisonSetup};
use twinbeam_core::simulator::{
    readout_region, shot_seed, simulate_background_pair, simulate_twin_pair, write_truth_csv, Arm,
    Detector, ObjectMask, ShotTruth,
};
use twinbeam_core::{BinKind, BinMode, Error, Frame, Region, Result};

use crate::{Common, SweepVariable};

/// Background frames of shot `k` use `shot_seed(seed ^ BACKGROUND_ROOT, k)`.
const BACKGROUND_ROOT: u64 = 0xb6d0_0000_0000_0001;

fn load_config(common: &Common, apply_bin: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(shots) = common.shots {
        cfg.shots = shots;
    }
    if let Some(window) = common.window {
        cfg.analysis.window = window;
    }
    if let (true, Some(bin)) = (apply_bin, common.bin) {
        cfg.detector.bin.factor = bin;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output directory; pass --out or set output".into()))?;
    fs::create_dir_all(&dir).map_err(Error::file(&dir))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(Error::file(path))?,
    ))
}

fn write_effective(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let path = dir.join("effective.cfg");
    fs::write(&path, cfg.to_text()).map_err(Error::file(&path))
}

fn bin_label(bin: BinMode) -> String {
    let kind = match bin.kind {
        BinKind::Hardware => "hardware",
        BinKind::Software => "software",
    };
    format!("{kind} {0}x{0}", bin.factor)
}

struct Shot {
    signal: Frame,
    idler: Frame,
    truth: ShotTruth,
    background: Option<(Frame, Frame)>,
}

fn simulate_shot(cfg: &RunConfig, det: &Detector, k: u64) -> Result<Shot> {
    let pair = simulate_twin_pair(&cfg.source, det, shot_seed(cfg.seed, k))?;
    let background = if cfg.analysis.background_correction {
        Some(simulate_background_pair(
            det,
            shot_seed(cfg.seed ^ BACKGROUND_ROOT, k),
        )?)
    } else {
        None
    };
    Ok(Shot {
        signal: pair.signal,
        idler: pair.idler,
        truth: pair.truth,
        background,
    })
}

pub fn simulate(common: &Common) -> Result<String> {
    let cfg = load_config(common, true)?;
    let dir = output_dir(&cfg)?;
    write_effective(&dir, &cfg)?;
    let det = Detector::new(cfg.detector.clone(), cfg.source.grid)?;
    let results: Vec<(ShotTruth, f64, (usize, usize))> = (0..cfg.shots as u64)
        .into_par_iter()
        .map(|k| {
            let shot = simulate_shot(&cfg, &det, k)?;
            write_frame(&shot.signal, dir.join(format!("signal_{k:04}.tbf")))?;
            write_frame(&shot.idler, dir.join(format!("idler_{k:04}.tbf")))?;
            if let Some((bs, bi)) = &shot.background {
                write_frame(bs, dir.join(format!("background_signal_{k:04}.tbf")))?;
                write_frame(bi, dir.join(format!("background_idler_{k:04}.tbf")))?;
            }
            let dims = (shot.signal.width(), shot.signal.height());
            Ok((shot.truth, shot.signal.mean(), dims))
        })
        .collect::<Result<_>>()?;
    let truths: Vec<ShotTruth> = results.iter().map(|r| r.0.clone()).collect();
    write_truth_csv(create(&dir.join("truth.csv"))?, &truths)?;
    let mean = results.iter().map(|r| r.1).sum::<f64>() / results.len() as f64;
    let (w, h) = results[0].2;
    Ok(format!(
        "simulate: {} shots of {w}x{h} frames ({}), mean {mean:.1} counts per element, written to {}",
        cfg.shots,
        bin_label(cfg.detector.bin),
        dir.display()
    ))
}

/// Frame preprocessing shared by every shot of an analysis.
struct Pipeline {
    extra_bin: usize,
    gain: Option<(Frame, Frame)>,
}

impl Pipeline {
    fn new(cfg: &RunConfig, extra_bin: usize) -> Result<Self> {
        let gain = if cfg.analysis.flat_field && cfg.detector.eta_sigma > 0.0 {
            let det = Detector::new(cfg.detector.clone(), cfg.source.grid)?;
            let coarse = |arm| -> Result<Frame> {
                let g = det.binned_gain(arm)?;
                if extra_bin > 1 {
                    block_mean(&g, extra_bin)
                } else {
                    Ok(g)
                }
            };
            Some((coarse(Arm::Signal)?, coarse(Arm::Idler)?))
        } else {
            None
        };
        Ok(Self { extra_bin, gain })
    }

    fn prepare(&self, frame: &Frame, gain: Option<&Frame>) -> Result<Frame> {
        let f = if self.extra_bin > 1 {
            bin_frame(frame, BinMode::software(self.extra_bin), false)?
        } else {
            frame.clone()
        };
        match gain {
            Some(g) => flat_field(&f, g),
            None => Ok(f),
        }
    }

    fn spec_for(&self, cfg: &RunConfig, frame: &Frame) -> Result<AnalysisSpec> {
        let region = match cfg.analysis.region {
            Some(r) if self.extra_bin > 1 => r.binned(self.extra_bin)?,
            Some(r) => r,
            None => cfg.analysis.region_for(frame.width(), frame.height())?,
        };
        Ok(AnalysisSpec {
            subpixel: cfg.analysis.subpixel,
            ..AnalysisSpec::new(region, cfg.analysis.window)
        })
    }

    fn run(&self, cfg: &RunConfig, shot: &Shot, id: u64) -> Result<Analysis> {
        let (gs, gi) = match &self.gain {
            Some((s, i)) => (Some(s), Some(i)),
            None => (None, None),
        };
        let s = self.prepare(&shot.signal, gs)?;
        let i = self.prepare(&shot.idler, gi)?;
        let bg = match &shot.background {
            Some((bs, bi)) => Some((self.prepare(bs, gs)?, self.prepare(bi, gi)?)),
            None => None,
        };
        let spec = self.spec_for(cfg, &s)?;
        let background = || {
            bg.as_ref().map(|(bs, bi)| Background {
                signal: bs,
                idler: bi,
            })
        };
        match analyze_pair(&s, &i, &spec, id, background()) {
            // no resolvable dip: report the nominal center
            Err(Error::Minimum(_)) => {
                analyze_pair(&s, &i, &spec.at_nominal_center(), id, background())
            }
            other => other,
        }
    }
}

struct Aggregate {
    sigma: (f64, f64),
    fano: (f64, f64),
    sigma_corrected: Option<(f64, f64)>,
    fwhm: f64,
}

fn aggregate(reports: &[NoiseReport]) -> Aggregate {
    let pick =
        |f: fn(&NoiseReport) -> f64| mean_and_stderr(&reports.iter().map(f).collect::<Vec<_>>());
    let corrected: Vec<f64> = reports.iter().filter_map(|r| r.sigma_corrected).collect();
    let widths: Vec<f64> = reports
        .iter()
        .map(|r| 0.5 * (r.fwhm_x + r.fwhm_y))
        .filter(|w| w.is_finite())
        .collect();
    Aggregate {
        sigma: pick(|r| r.sigma),
        fano: pick(|r| r.fano()),
        sigma_corrected: (!corrected.is_empty()).then(|| mean_and_stderr(&corrected)),
        fwhm: if widths.is_empty() {
            f64::NAN
        } else {
            widths.iter().sum::<f64>() / widths.len() as f64
        },
    }
}

fn shot_index(name: &str) -> Option<u64> {
    name.strip_prefix("signal_")?
        .strip_suffix(".tbf")?
        .parse()
        .ok()
}

fn load_shot(dir: &Path, index: u64, name: &str) -> Result<Shot> {
    let suffix = name.strip_prefix("signal_").unwrap();
    let signal = read_frame(dir.join(name))?;
    let idler = read_frame(dir.join(format!("idler_{suffix}")))?;
    let (bs, bi) = (
        dir.join(format!("background_signal_{suffix}")),
        dir.join(format!("background_idler_{suffix}")),
    );
    let background = if bs.exists() && bi.exists() {
        Some((read_frame(bs)?, read_frame(bi)?))
    } else {
        None
    };
    Ok(Shot {
        signal,
        idler,
        truth: unknown_truth(index),
        background,
    })
}

/// Frames read from disk carry no generation record.
fn unknown_truth(seed: u64) -> ShotTruth {
    ShotTruth {
        seed,
        pair_count: 0,
        idler_dropped: 0,
        center_offset: Default::default(),
    }
}

fn analyze_all(cfg: &RunConfig, pipe: &Pipeline, shots: &[(u64, Shot)]) -> Result<Vec<Analysis>> {
    shots
        .par_iter()
        .map(|(id, shot)| pipe.run(cfg, shot, *id))
        .collect()
}

pub fn analyze(
    common: &Common,
    input: Option<PathBuf>,
    pair: Option<(PathBuf, PathBuf)>,
) -> Result<String> {
    let cfg = load_config(common, false)?;
    let extra_bin = common.bin.unwrap_or(1);
    let pipe = Pipeline::new(&cfg, extra_bin)?;

    let (shots, default_out): (Vec<(u64, Shot)>, PathBuf) = match pair {
        Some((s, i)) => {
            let shot = Shot {
                signal: read_frame(&s)?,
                idler: read_frame(&i)?,
                truth: unknown_truth(0),
                background: None,
            };
            let parent = s.parent().map(Path::to_path_buf).unwrap_or_default();
            (vec![(0, shot)], parent)
        }
        None => {
            let dir = input
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Config("no input directory; pass --input or --out".into()))?;
            let mut names: Vec<(u64, String)> = fs::read_dir(&dir)
                .map_err(Error::file(&dir))?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    shot_index(&name).map(|k| (k, name))
                })
                .collect();
            names.sort();
            if names.is_empty() {
                return Err(Error::Format {
                    path: dir,
                    reason: "no signal_NNNN.tbf frames".into(),
                });
            }
            let shots = names
                .par_iter()
                .map(|(k, name)| load_shot(&dir, *k, name).map(|s| (*k, s)))
                .collect::<Result<_>>()?;
            (shots, dir)
        }
    };
    let out = common.out.clone().unwrap_or(default_out);
    fs::create_dir_all(&out).map_err(Error::file(&out))?;

    let analyses = analyze_all(&cfg, &pipe, &shots)?;
    let reports: Vec<NoiseReport> = analyses.iter().map(|a| a.report.clone()).collect();
    let maps: Vec<CorrelationMap> = analyses.into_iter().map(|a| a.map).collect();
    let mean_map = CorrelationMap::mean(&maps)?;
    write_report_csv(create(&out.join("report.csv"))?, &reports)?;
    write_map_csv(create(&out.join("map.csv"))?, &mean_map)?;

    let agg = aggregate(&reports);
    let mut summary = format!(
        "analyze: {} pairs, sigma {:.4} +- {:.4}, fano {:.4} +- {:.4}",
        reports.len(),
        agg.sigma.0,
        agg.sigma.1,
        agg.fano.0,
        agg.fano.1
    );
    if let Some((m, se)) = agg.sigma_corrected {
        summary += &format!(", corrected sigma {m:.4} +- {se:.4}");
    }
    if let Ok(dip) = find_minimum(&mean_map) {
        summary += &format!(", ensemble dip fwhm {:.2}", dip.fwhm());
    }
    Ok(summary)
}

pub fn sweep(common: &Common, variable: SweepVariable, values: &[f64]) -> Result<String> {
    let base = load_config(common, true)?;
    let dir = output_dir(&base)?;
    write_effective(&dir, &base)?;
    let name = match variable {
        SweepVariable::BinFactor => "bin_factor",
        SweepVariable::PhotonFlux => "photon_flux",
        SweepVariable::Eta => "eta",
    };
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        match variable {
            SweepVariable::BinFactor => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!(
                        "bin factor {value} is not a positive integer"
                    )));
                }
                cfg.detector.bin.factor = value as usize;
                // region sizes differ between bin factors
                cfg.analysis.region = None;
            }
            SweepVariable::PhotonFlux => {
                cfg.source = cfg
                    .source
                    .clone()
                    .with_detected_flux(value, cfg.detector.eta);
            }
            SweepVariable::Eta => cfg.detector.eta = value,
        }
        cfg.validate()
            .map_err(|e| Error::Config(format!("{name} = {value}: {e}")))?;
        let det = Detector::new(cfg.detector.clone(), cfg.source.grid)?;
        let pipe = Pipeline::new(&cfg, 1)?;
        let reports: Vec<NoiseReport> = (0..cfg.shots as u64)
            .into_par_iter()
            .map(|k| {
                let shot = simulate_shot(&cfg, &det, k)?;
                pipe.run(&cfg, &shot, k).map(|a| a.report)
            })
            .collect::<Result<_>>()?;
        rows.push((value, reports.len(), aggregate(&reports)));
    }

    let mut w = csv::Writer::from_writer(create(&dir.join("sweep.csv"))?);
    w.write_record([
        "variable",
        "value",
        "shots",
        "sigma_mean",
        "sigma_se",
        "fano_mean",
        "fano_se",
        "sigma_corrected_mean",
        "sigma_corrected_se",
        "fwhm_mean",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (value, n, a) in &rows {
        w.write_record([
            name.to_string(),
            value.to_string(),
            n.to_string(),
            a.sigma.0.to_string(),
            a.sigma.1.to_string(),
            a.fano.0.to_string(),
            a.fano.1.to_string(),
            opt(a.sigma_corrected.map(|c| c.0)),
            opt(a.sigma_corrected.map(|c| c.1)),
            a.fwhm.to_string(),
        ])?;
    }
    w.flush().map_err(Error::file(dir.join("sweep.csv")))?;

    let sigmas: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.2.sigma.0)).collect();
    Ok(format!(
        "sweep: {name} over {} values, sigma {}",
        rows.len(),
        sigmas.join(" ")
    ))
}

fn load_mask(path: &Path, width: usize, height: usize) -> Result<ObjectMask> {
    let frame = read_frame(path)?;
    if frame.width() != width || frame.height() != height {
        return Err(Error::Imaging(format!(
            "mask {}x{} does not match the {width}x{height} grid",
            frame.width(),
            frame.height()
        )));
    }
    ObjectMask::new(width, height, frame.into_data())
        .map_err(|e| Error::Imaging(format!("mask {}: {e}", path.display())))
}

pub fn imaging(common: &Common, mask: Option<PathBuf>) -> Result<String> {
    let cfg = load_config(common, true)?;
    let dir = output_dir(&cfg)?;
    let grid = cfg.source.grid;
    let mask = match mask.or_else(|| cfg.object_mask.clone()) {
        Some(path) => load_mask(&path, grid.width, grid.height)?,
        None => ObjectMask::disc(
            grid.width,
            grid.height,
            cfg.object_radius,
            (1.0 - cfg.object_deficit) as f32,
        )?,
    };
    write_effective(&dir, &cfg)?;
    let det = Detector::new(cfg.detector.clone(), grid)?;
    let f = cfg.detector.bin.factor;
    let roi = readout_region(grid, cfg.detector.bin)?;
    let region: Region = cfg.analysis.region_for(roi.width / f, roi.height / f)?;
    let outcome = run_comparison(&ComparisonSetup {
        source: &cfg.source,
        detector: &det,
        mask: &mask,
        region,
        center: cfg.center_offset().scaled(1.0 / f as f64),
        shots: cfg.shots,
        seed: cfg.seed,
    })?;
    write_image_csv(
        create(&dir.join("imaging.csv"))?,
        &outcome.image,
        &outcome.alpha_true,
    )?;
    write_snr_csv(
        create(&dir.join("snr.csv"))?,
        std::slice::from_ref(&outcome.comparison),
    )?;
    let c = &outcome.comparison;
    let (r, se) = c.ratio();
    Ok(format!(
        "imaging: {} shots, sigma {:.3}, snr quantum {:.3} vs classical {:.3}, ratio {r:.3} +- {se:.3} (1/sqrt(sigma) = {:.3})",
        c.shots,
        c.sigma_twin,
        c.snr_quantum,
        c.snr_classical_differential,
        c.predicted_ratio()
    ))
}
