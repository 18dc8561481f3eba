//! Deep-learning speckle filtering for dual-polarimetric SAR covariance
//! imagery.
//!
//! The crate covers the full pipeline at desk scale:
//!
//! - [`raster`] — minimal bit-exact raster formats (PSR1) and containers.
//! - [`polsar`] — the reversible covariance/intensity transform, SPAN,
//!   boxcar multilook, temporal averaging, and PSD repair.
//! - [`sim`] — a complex-Wishart speckle simulator with scripted temporal
//!   changes, the stand-in for real dual-pol stacks.
//! - [`change`] — the omnibus Wishart equality test and change masks.
//! - [`dataset`] — normalization and change-aware noisy/clean patch sampling.
//! - [`dncnn`] — a from-scratch residual denoising CNN: exact-gradient
//!   tensor ops, Adam, training, checkpoints, tiled inference.
//! - [`metrics`] — despeckling quality indices (ENL, EPD-ROA, SSIM).
//! - [`pipeline`] — JSON-manifest plumbing behind the CLI subcommands.
//!
//! Everything is deterministic under explicit seeds: simulation and patch
//! sampling use per-pixel/per-draw RNG substreams, and training uses a fixed
//! batch-assembly and reduction order.

pub mod change;
pub mod dataset;
pub mod dncnn;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod polsar;
pub mod raster;
pub mod sim;
pub mod util;

pub use error::{Error, Result};
pub use raster::{BandStack, C2Raster, MaskRaster, TemporalStack};
