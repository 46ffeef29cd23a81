//! Self-supervised training pairs for SAR enhancement from azimuth
//! subaperture decomposition, plus the evaluation protocol for enhancers.
//!
//! The stages compose as
//! `simulate / ingest SLC -> decompose -> preprocess -> pairs -> enhance -> evaluate`;
//! [`pipeline::run_pipeline`] drives them end to end.

pub mod config;
pub mod dataset;
pub mod doppler;
pub mod enhance;
pub mod error;
pub mod grdf;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod slc_sim;
pub mod subaperture;

pub use error::{Error, ErrorClass, Result};
pub use raster::{ClipBounds, ComplexRaster, IntensityRaster, Polarization, RadiometricState, RasterMeta};
pub use slc_sim::{RadarParams, SceneSpec};
pub use subaperture::{SubapertureSet, SubapertureSpec};
