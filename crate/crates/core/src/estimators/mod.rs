//! Spatial-ensemble estimators: region moments, noise-reduction maps, dip
//! extraction, sub-pixel centering, Fano factors and background correction.
//!
//! All estimators are pure functions of their input frames.

mod correct;
mod dip;
mod map;
mod report;
mod stats;

pub use correct::{fano_corrected, sigma_corrected, Corrected};
pub use dip::{
    find_minimum, fit_gaussian_dip, gaussian_vertex, paraboloid_vertex, subpixel_center, DipResult,
    GaussianDip, SubpixelCenter, SubpixelMethod,
};
pub use map::{sigma_at, sigma_map, CorrelationMap, Reflection};
pub use report::{
    analyze_pair, write_map_csv, write_report_csv, Analysis, AnalysisSpec, Background, NoiseReport,
    REPORT_HEADER,
};
pub use stats::{fano, region_stats, RegionStats};

/// Mean and standard error of the mean of a sample.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, f64::NAN);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
