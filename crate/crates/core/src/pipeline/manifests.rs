//! Manifest schemas for each pipeline command.
//!
//! Every manifest is a flat JSON object with explicit output paths and, for
//! commands that consume randomness, a mandatory seed — wall-clock seeding
//! is deliberately impossible. Optional fields carry the defaults listed on
//! each struct.

use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::dncnn::{NetConfig, TrainConfig};
use crate::metrics::{RegionOfInterest, SsimConvention};
use crate::sim::{ChangeScript, SceneSpec};

/// Index of a temporal stack: epoch raster paths plus acquisition dates,
/// stored as JSON next to the rasters. Written by `simulate`, consumed by
/// `changemask`, `dataset` and `evaluate`; hand-written indices over
/// externally produced PSR1 rasters work the same way. Relative paths are
/// resolved against the index's own directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    pub epochs: Vec<String>,
    pub dates: Vec<String>,
}

/// `simulate`: draw a speckled temporal stack from a scene description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateManifest {
    pub scene: SceneSpec,
    /// Scripted truth changes; omitted = one still epoch.
    #[serde(default)]
    pub script: Option<ChangeScript>,
    pub seed: u64,
    /// First acquisition date (ISO `YYYY-MM-DD`), stepped by
    /// `interval_days` per epoch. Defaults to 2021-01-01 every 12 days.
    #[serde(default = "default_start_date")]
    pub start_date: String,
    #[serde(default = "default_interval_days")]
    pub interval_days: u32,
    /// Also write the noise-free truth raster of every epoch.
    #[serde(default = "default_true")]
    pub write_truth: bool,
    pub output_dir: String,
}

fn default_start_date() -> String {
    "2021-01-01".to_string()
}

fn default_interval_days() -> u32 {
    12
}

fn default_true() -> bool {
    true
}

/// `changemask`: omnibus change detection over a stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangemaskManifest {
    pub stack: String,
    /// Sliding multilook window applied to each epoch before testing.
    #[serde(default = "default_window_az")]
    pub window_az: usize,
    #[serde(default = "default_window_rg")]
    pub window_rg: usize,
    /// Effective-looks multiplier: the test runs with
    /// n = window_az * window_rg * looks_factor. Lower it below 1 for data
    /// with spatial sample correlation.
    #[serde(default = "default_looks_factor")]
    pub looks_factor: f64,
    #[serde(default = "default_significance")]
    pub significance: f64,
    pub mask_output: String,
    /// Optional f32 raster of per-pixel change probabilities.
    #[serde(default)]
    pub probability_output: Option<String>,
}

fn default_window_az() -> usize {
    4
}

fn default_window_rg() -> usize {
    19
}

fn default_looks_factor() -> f64 {
    1.0
}

fn default_significance() -> f64 {
    1e-10
}

/// `dataset`: change-aware noisy/clean patch sampling into a PSD1 file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub stack: String,
    /// Change mask from `changemask`; omitted = every pixel counts as
    /// stable (only safe for still scenes).
    #[serde(default)]
    pub mask: Option<String>,
    pub count: usize,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_max_change_ratio")]
    pub max_change_ratio: f64,
    /// Percentiles (0-100) of each band's pooled samples used as
    /// normalization bounds. The upper default of 99.9 keeps isolated
    /// point-target maxima from flattening the useful dynamic range.
    #[serde(default = "default_lo_percentile")]
    pub lo_percentile: f64,
    #[serde(default = "default_hi_percentile")]
    pub hi_percentile: f64,
    pub seed: u64,
    /// Provenance tag recorded with each patch.
    #[serde(default)]
    pub stack_id: u32,
    pub output: String,
}

fn default_patch() -> usize {
    64
}

fn default_max_change_ratio() -> f64 {
    0.10
}

fn default_lo_percentile() -> f64 {
    0.0
}

fn default_hi_percentile() -> f64 {
    99.9
}

/// `train`: fit the residual denoiser on a PSD1 dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainManifest {
    pub dataset: String,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Authoritative RNG seed; overrides `train.seed`.
    pub seed: u64,
    pub checkpoint_output: String,
    /// Per-epoch CSV log (`epoch,lr,train_loss,val_loss`).
    pub log_output: String,
}

/// `despeckle`: run a checkpoint over a C2 raster tile by tile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DespeckleManifest {
    pub input: String,
    pub checkpoint: String,
    #[serde(default = "default_tile")]
    pub tile: usize,
    #[serde(default = "default_overlap")]
    pub overlap: usize,
    #[serde(default = "default_true")]
    pub project_psd: bool,
    /// Expected normalization bounds. On mismatch with the checkpoint a
    /// warning is logged and the checkpoint's stats win — they are what the
    /// network was trained with.
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
    pub output: String,
    /// Optional PNG quicklook of the filtered raster.
    #[serde(default)]
    pub quicklook: Option<String>,
}

fn default_tile() -> usize {
    256
}

fn default_overlap() -> usize {
    16
}

/// `evaluate`: quality indices over labelled regions, written as CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateManifest {
    pub original: String,
    pub filtered: String,
    /// Reference raster for SSIM (typically a temporal average); omitted =
    /// the SSIM column is left empty.
    #[serde(default)]
    pub reference: Option<String>,
    pub rois: Vec<RegionOfInterest>,
    #[serde(default = "default_ssim_window")]
    pub ssim_window: usize,
    #[serde(default = "default_ssim_convention")]
    pub ssim_convention: SsimConvention,
    /// Dynamic range L for SSIM; omitted = the span range of the reference
    /// inside each region.
    #[serde(default)]
    pub ssim_dynamic_range: Option<f64>,
    pub output: String,
}

fn default_ssim_window() -> usize {
    8
}

fn default_ssim_convention() -> SsimConvention {
    SsimConvention::Literal
}
