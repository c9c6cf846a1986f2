use super::*;
use crate::estimators::{analyze_pair, fano, mean_and_stderr, region_stats, AnalysisSpec};
use crate::frames::Region;

fn small_source(width: usize, fwhm: f64, mu: f64, modes: u32) -> SourceConfig {
    SourceConfig {
        grid: Grid::new(width, width, 20.0),
        mu,
        temporal_modes: modes,
        coherence_fwhm: fwhm,
        ..Default::default()
    }
}

fn detector(cfg: DetectorConfig, grid: Grid) -> Detector {
    Detector::new(cfg, grid).unwrap()
}

/// Per-shot sigma at the nominal center over the interior superpixels.
fn nominal_sigmas(
    src: &SourceConfig,
    det: &Detector,
    bins: usize,
    shots: u64,
    root: u64,
) -> Vec<f64> {
    let inner = bins - 2;
    (0..shots)
        .map(|k| {
            let shot = simulate_twin_pair(src, det, shot_seed(root, k)).unwrap();
            let spec = AnalysisSpec::new(Region::new(1, 1, inner, inner), 0).at_nominal_center();
            analyze_pair(&shot.signal, &shot.idler, &spec, k, None)
                .unwrap()
                .report
                .sigma
        })
        .collect()
}

#[test]
fn same_seed_same_shot() {
    let src = small_source(32, 4.0, 0.5, 20);
    let det = detector(
        DetectorConfig {
            read_noise: 2.0,
            background_mean: 1.0,
            eta_sigma: 0.05,
            ..DetectorConfig::default()
        },
        src.grid,
    );
    let a = simulate_twin_pair(&src, &det, 11).unwrap();
    let b = simulate_twin_pair(&src, &det, 11).unwrap();
    let c = simulate_twin_pair(&src, &det, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.signal, c.signal);
}

#[test]
fn noise_settings_leave_photons_unchanged() {
    let src = small_source(32, 4.0, 0.5, 20);
    let quiet = detector(DetectorConfig::noiseless(0.67), src.grid);
    let noisy = quiet.with_noise(3.0, 2.0, BinMode::NONE).unwrap();
    let p = twin_photons(&src, &quiet, 5).unwrap();
    assert_eq!(p, twin_photons(&src, &noisy, 5).unwrap());
    let q = detect(&p, &quiet).unwrap();
    let n = detect(&p, &noisy).unwrap();
    let excess = n.signal.total() - q.signal.total();
    // background of 2 per pixel plus zero-mean read noise over 1024 pixels
    assert!((excess / 1024.0 - 2.0).abs() < 0.3, "{excess}");
}

#[test]
fn pairs_are_conserved() {
    let src = SourceConfig {
        center_offset: Displacement::new(2.5, -1.0),
        ..small_source(40, 6.0, 0.3, 50)
    };
    let det = detector(DetectorConfig::noiseless(1.0), src.grid);
    for seed in 0..5 {
        let p = twin_photons(&src, &det, seed).unwrap();
        assert!(p.truth.pair_count > 0);
        assert_eq!(p.generated_signal, p.truth.pair_count);
        assert_eq!(
            p.generated_idler + p.truth.idler_dropped,
            p.truth.pair_count
        );
        // unit efficiency keeps every photon
        assert_eq!(
            p.signal.iter().map(|&v| v as u64).sum::<u64>(),
            p.generated_signal
        );
        assert!(p.truth.idler_dropped > 0);
    }
}

#[test]
fn zero_efficiency_records_nothing() {
    let src = small_source(24, 4.0, 1.0, 20);
    let det = detector(DetectorConfig::noiseless(0.0), src.grid);
    let shot = simulate_twin_pair(&src, &det, 3).unwrap();
    assert_eq!(shot.signal.total(), 0.0);
    assert_eq!(shot.idler.total(), 0.0);
}

#[test]
fn signal_fano_matches_thermal_excess() {
    // bins aligned with the coherence cells hold every signal photon of one cell
    let (eta, mu) = (0.67, 2.0);
    let src = small_source(64, 8.0, mu, 50);
    let det = detector(
        DetectorConfig {
            bin: BinMode::software(8),
            ..DetectorConfig::noiseless(eta)
        },
        src.grid,
    );
    let mut values = Vec::new();
    for k in 0..40 {
        let shot = simulate_twin_pair(&src, &det, shot_seed(21, k)).unwrap();
        values.extend(shot.signal.data().iter().map(|&v| v as f64));
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let expect_mean = eta * mu * 50.0;
    assert!(
        (m / expect_mean - 1.0).abs() < 0.02,
        "mean {m} vs {expect_mean}"
    );
    let f = v / m;
    assert!((f / (1.0 + eta * mu) - 1.0).abs() < 0.1, "F {f}");
}

#[test]
fn lossless_large_bins_approach_zero() {
    let src = small_source(96, 0.25, 1.0, 10);
    let det = detector(
        DetectorConfig {
            bin: BinMode::software(16),
            ..DetectorConfig::noiseless(1.0)
        },
        src.grid,
    );
    let s = nominal_sigmas(&src, &det, 6, 20, 31);
    let (m, _) = mean_and_stderr(&s);
    let theory = theory::expected_twin_sigma(1.0, 1.0, 16.0, 0.25);
    assert!(theory < 0.03);
    assert!((m - theory).abs() < 0.01, "{m} vs {theory}");
}

#[test]
fn unbalanced_arms_follow_closed_form() {
    let (es, ei, mu) = (0.9, 0.5, 1.0);
    let src = small_source(96, 0.25, mu, 10);
    let det = detector(
        DetectorConfig {
            idler_eta: Some(ei),
            bin: BinMode::software(16),
            ..DetectorConfig::noiseless(es)
        },
        src.grid,
    );
    let s = nominal_sigmas(&src, &det, 6, 40, 41);
    let (m, se) = mean_and_stderr(&s);
    let exact = theory::unbalanced_sigma(es, ei, mu);
    // partners lost across bin edges add about 2% of the mean efficiency
    assert!(
        (m - exact).abs() < 0.03 + 3.0 * se,
        "{m} +- {se} vs {exact}"
    );
    assert!(m > 1.0 - 2.0 * es * ei / (es + ei));
}

#[test]
fn coherent_zero_mean_is_empty() {
    let det = detector(DetectorConfig::noiseless(0.67), Grid::new(16, 16, 20.0));
    let shot = simulate_coherent_pair(0.0, &det, 1).unwrap();
    assert_eq!(shot.signal.total(), 0.0);
    assert_eq!(shot.idler.total(), 0.0);
    assert!(simulate_coherent_pair(-1.0, &det, 1).is_err());
}

#[test]
fn coherent_light_is_shot_noise_limited() {
    let grid = Grid::new(64, 64, 20.0);
    let det = detector(DetectorConfig::noiseless(0.67), grid);
    let region = Region::new(4, 4, 56, 56);
    let (mut s, mut f) = (Vec::new(), Vec::new());
    for k in 0..8 {
        let shot = simulate_coherent_pair(600.0 / 0.67, &det, shot_seed(51, k)).unwrap();
        let spec = AnalysisSpec::new(region, 0).at_nominal_center();
        let r = analyze_pair(&shot.signal, &shot.idler, &spec, k, None)
            .unwrap()
            .report;
        s.push(r.sigma);
        f.push(r.fano());
        assert!((r.mean_s / 600.0 - 1.0).abs() < 0.01);
    }
    assert!((mean_and_stderr(&s).0 - 1.0).abs() < 0.03);
    assert!((mean_and_stderr(&f).0 - 1.0).abs() < 0.03);
}

#[test]
fn read_noise_inflates_fano() {
    let grid = Grid::new(64, 64, 20.0);
    let det = detector(
        DetectorConfig {
            read_noise: 10.0,
            ..DetectorConfig::noiseless(1.0)
        },
        grid,
    );
    let region = Region::new(0, 0, 64, 64);
    let f: Vec<f64> = (0..8)
        .map(|k| {
            fano(
                &simulate_coherent_pair(100.0, &det, k).unwrap().signal,
                region,
            )
            .unwrap()
        })
        .collect();
    // 1 + 10^2 / 100
    assert!((mean_and_stderr(&f).0 - 2.0).abs() < 0.06);
}

#[test]
fn replica_background_moments() {
    let (src, cfg) = replica();
    let det = detector(
        DetectorConfig {
            bin: BinMode::hardware(8),
            read_noise: REPLICA_SUPERPIXEL_READ_NOISE,
            ..cfg
        },
        src.grid,
    );
    let mut values = Vec::new();
    for k in 0..10 {
        values.extend(
            simulate_background_frame(&det, k)
                .unwrap()
                .data()
                .iter()
                .map(|&v| v as f64),
        );
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    assert!((m - 120.0).abs() < 1.0, "{m}");
    assert!((v - 201.0).abs() < 20.0, "{v}");
}

#[test]
fn weak_background_alone_is_poissonian() {
    let det = detector(
        DetectorConfig {
            background_mean: 50.0,
            ..DetectorConfig::noiseless(0.67)
        },
        Grid::new(64, 64, 20.0),
    );
    let frame = simulate_background_frame(&det, 2).unwrap();
    let st = region_stats(&frame, frame.region()).unwrap();
    assert!((st.mean - 50.0).abs() < 0.5);
    assert!((st.variance / st.mean - 1.0).abs() < 0.06);
}

#[test]
fn binning_mode_sets_read_noise_variance() {
    let grid = Grid::new(128, 128, 20.0);
    let base = DetectorConfig {
        read_noise: 3.0,
        ..DetectorConfig::noiseless(0.67)
    };
    for (bin, expect) in [
        (BinMode::hardware(4), 9.0f64),
        (BinMode::software(4), 16.0 * 9.0),
    ] {
        let det = detector(
            DetectorConfig {
                bin,
                ..base.clone()
            },
            grid,
        );
        let frame = simulate_background_frame(&det, 9).unwrap();
        let st = region_stats(&frame, frame.region()).unwrap();
        assert!(st.mean.abs() < 0.1 * expect.sqrt());
        assert!(
            (st.variance / expect - 1.0).abs() < 0.1,
            "{bin:?}: {}",
            st.variance
        );
    }
}

#[test]
fn object_thins_the_signal_arm() {
    let src = small_source(32, 4.0, 1.0, 40);
    let det = detector(DetectorConfig::noiseless(0.67), src.grid);
    let plain = simulate_twin_pair(&src, &det, 8).unwrap();
    let clear = apply_object(&src, ObjectMask::uniform(32, 32, 1.0).unwrap()).unwrap();
    assert_eq!(simulate_twin_pair(&clear, &det, 8).unwrap(), plain);

    let opaque = apply_object(&src, ObjectMask::uniform(32, 32, 0.0).unwrap()).unwrap();
    let dark = simulate_twin_pair(&opaque, &det, 8).unwrap();
    assert_eq!(dark.signal.total(), 0.0);
    assert_eq!(dark.idler, plain.idler);

    let grey = apply_object(&src, ObjectMask::uniform(32, 32, 0.9).unwrap()).unwrap();
    let ratio: f64 = (0..10)
        .map(|k| {
            let seed = shot_seed(61, k);
            let a = simulate_twin_pair(&grey, &det, seed)
                .unwrap()
                .signal
                .total();
            let b = simulate_twin_pair(&src, &det, seed).unwrap().signal.total();
            a / b
        })
        .sum::<f64>()
        / 10.0;
    assert!((ratio - 0.9).abs() < 0.01, "{ratio}");

    assert!(apply_object(&src, ObjectMask::uniform(16, 16, 1.0).unwrap()).is_err());
}

#[test]
fn efficiency_map_is_frozen_and_flat_fields_out() {
    let grid = Grid::new(32, 32, 20.0);
    let cfg = DetectorConfig {
        eta_sigma: 0.03,
        ..DetectorConfig::noiseless(0.67)
    };
    let a = detector(cfg.clone(), grid);
    let b = detector(cfg, grid);
    assert_eq!(a.efficiency(Arm::Signal), b.efficiency(Arm::Signal));
    assert_ne!(a.efficiency(Arm::Signal), a.efficiency(Arm::Idler));
    let g = a.relative_gain(Arm::Signal);
    assert!((g.mean() - 1.0).abs() < 0.01);
    let st = region_stats(&g, g.region()).unwrap();
    assert!((st.variance.sqrt() - 0.03).abs() < 0.005);
}

#[test]
fn grid_mismatch_is_rejected() {
    let src = small_source(32, 4.0, 1.0, 10);
    let det = detector(DetectorConfig::default(), Grid::new(16, 16, 20.0));
    assert!(matches!(twin_photons(&src, &det, 0), Err(Error::Config(_))));
}

#[test]
fn readout_crops_symmetrically() {
    let grid = Grid::new(184, 184, 20.0);
    assert_eq!(
        readout_region(grid, BinMode::hardware(12)).unwrap(),
        Region::new(2, 2, 180, 180)
    );
    assert_eq!(
        readout_region(grid, BinMode::hardware(8)).unwrap(),
        Region::new(0, 0, 184, 184)
    );
    assert!(readout_region(grid, BinMode::hardware(3)).is_err());

    let src = small_source(52, 0.5, 0.5, 10);
    let det = detector(
        DetectorConfig {
            bin: BinMode::software(12),
            eta_sigma: 0.02,
            ..DetectorConfig::noiseless(1.0)
        },
        src.grid,
    );
    let shot = simulate_twin_pair(&src, &det, 4).unwrap();
    assert_eq!((shot.signal.width(), shot.signal.height()), (4, 4));
    assert_eq!(det.binned_gain(Arm::Idler).unwrap().width(), 4);
    let spec = AnalysisSpec::new(Region::new(1, 1, 2, 2), 0).at_nominal_center();
    let r = analyze_pair(&shot.signal, &shot.idler, &spec, 0, None)
        .unwrap()
        .report;
    // a shifted reflection center would leave the arms uncorrelated
    assert!(r.sigma < 0.2, "{}", r.sigma);
}

#[test]
fn background_pair_arms_are_independent() {
    let det = detector(
        DetectorConfig {
            background_mean: 5.0,
            ..DetectorConfig::noiseless(0.67)
        },
        Grid::new(16, 16, 20.0),
    );
    let (s, i) = simulate_background_pair(&det, 3).unwrap();
    assert_eq!(s, simulate_background_frame(&det, 3).unwrap());
    assert_ne!(s, i);
}
