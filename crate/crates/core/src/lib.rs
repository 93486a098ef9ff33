//! Change-point detection and forecasting for piecewise-stationary SIR
//! transmission and recovery rates.

pub mod design;
pub mod detect;
pub mod diag;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod simgen;
pub mod spatial;
pub mod varfit;

pub use design::{standardize, Design, ScalingInfo};
pub use detect::{detect, ChangePointResult, DetectConfig};
pub use diag::Warning;
pub use error::{Error, Result};
pub use model::{
    build_design, to_true_infected, EpidemicSeries, ReportingFamily, SegmentParams, SirDesignRow,
    UnderReporting,
};
