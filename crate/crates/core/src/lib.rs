//! Simulation and analysis of spatially correlated twin-beam photon-count
//! images: frame model and binning, a cell-based twin-beam source with CCD
//! imperfections, noise-reduction estimators, and differential imaging of
//! weak absorbing objects.

pub mod config;
pub mod error;
pub mod estimators;
pub mod frames;
pub mod imaging;
pub mod simulator;

pub use config::{AnalysisConfig, RunConfig};
pub use error::{Error, Result};
pub use frames::{BinKind, BinMode, Displacement, Frame, Region};
