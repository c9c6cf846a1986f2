//! Fixtures shared by the benchmarks.

use twinbeam_core::estimators::Reflection;
use twinbeam_core::simulator::{simulate_twin_pair, Detector, ShotPair};
use twinbeam_core::{Frame, Region, Result, RunConfig};

/// The replica campaign: 184 px grid read out in 8x8 hardware superpixels.
pub fn replica_run() -> Result<(RunConfig, Detector)> {
    let cfg = RunConfig::replica();
    let det = Detector::new(cfg.detector.clone(), cfg.source.grid)?;
    Ok((cfg, det))
}

pub fn replica_shot(seed: u64) -> Result<ShotPair> {
    let (cfg, det) = replica_run()?;
    simulate_twin_pair(&cfg.source, &det, seed)
}

/// Unbinned frame of width `side` with a deterministic ramp.
pub fn ramp_frame(side: usize) -> Result<Frame> {
    let data = (0..side * side).map(|i| (i % 97) as f32).collect();
    Frame::new(side, side, 1.0, data)
}

pub struct MapInput {
    pub signal: Frame,
    pub idler: Frame,
    pub region: Region,
    pub reflection: Reflection,
}

pub fn map_input(seed: u64) -> Result<MapInput> {
    let (cfg, _) = replica_run()?;
    let shot = replica_shot(seed)?;
    let (w, h) = (shot.signal.width(), shot.signal.height());
    Ok(MapInput {
        region: cfg.analysis.region_for(w, h)?,
        reflection: Reflection::of(&shot.idler),
        signal: shot.signal,
        idler: shot.idler,
    })
}
