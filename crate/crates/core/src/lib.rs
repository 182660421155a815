//! Data preparation, detection evaluation and ensembling for bomb-crater
//! detection with domain-adapted lunar imagery.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`raster`]: 8-bit grayscale images, ROI crop, histograms, CLAHE, PNG I/O.
//! - [`tiling`]: fixed-size tile plans with shift-inward edge handling.
//! - [`georef`]: lunar crater catalog parsing and equirectangular projection.
//! - [`annotate`]: normalized labels, tile projection, label files.
//! - [`translate`]: histogram-matching translator, cycle loss, external adapter.
//! - [`detect`]: baseline blob detector, NMS, tile stitching, external adapter.
//! - [`evaluate`]: IoU, matching, AP@0.5 and report rendering.
//! - [`ensemble`]: multi-model fusion and georegistered deduplication.
//! - [`dataset`]: manifests, group-aware splits, training-set compositions.
//! - [`synthgen`]: synthetic crater fields with exact ground truth.
//! - [`pipeline`]: file-level orchestration used by the `crater` binary.

pub mod annotate;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod ensemble;
mod error;
pub mod evaluate;
pub mod georef;
mod fsutil;
pub mod pipeline;
pub mod raster;
pub mod synthgen;
pub mod tiling;
pub mod translate;

pub use error::{Error, Result};
