//! Normalization and change-aware construction of the noisy/clean patch
//! training set.
//!
//! Patches pair a single-look epoch (noisy) with the temporal average of the
//! stack (clean), both in the four-intensity band representation. Change-area
//! exclusion keeps training away from pixels where the temporal average is
//! not a valid clean reference: a draw is accepted only when the changed
//! fraction of its footprint stays below `max_change_ratio`.
//!
//! Normalization is a per-band min/max map X_N = (X - x_min)/(x_max - x_min)
//! clipped to [0, 1]. The upper bound defaults to the 99.9th percentile, not
//! the literal maximum: SAR intensity maxima are dominated by isolated point
//! targets, and a literal max would compress everything else into a sliver
//! of [0, 1].

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polsar::transform_raster;
use crate::raster::{BandStack, C2Raster, MaskRaster, TemporalStack, BAND_NAMES};
use crate::util::{percentile_sorted, substream};

use rand::Rng;

/// Per-band normalization bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub x_min: [f64; 4],
    pub x_max: [f64; 4],
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        for b in 0..4 {
            if !(self.x_max[b] > self.x_min[b]) {
                return Err(Error::Degenerate(format!(
                    "band {} ({}) has x_max {} <= x_min {}",
                    b, BAND_NAMES[b], self.x_max[b], self.x_min[b]
                )));
            }
        }
        Ok(())
    }

    /// Normalizes one sample of band `b` into [0, 1] (clipped).
    #[inline]
    pub fn normalize_value(&self, b: usize, v: f64) -> f64 {
        ((v - self.x_min[b]) / (self.x_max[b] - self.x_min[b])).clamp(0.0, 1.0)
    }

    /// Inverse map back to the original dynamic range. Values clipped during
    /// normalization stay at the bound (lossy above x_max by design).
    #[inline]
    pub fn denormalize_value(&self, b: usize, v: f64) -> f64 {
        v * (self.x_max[b] - self.x_min[b]) + self.x_min[b]
    }
}

/// Per-band percentile bounds over all samples of all stacks.
/// Defaults: `lo_pct` 0 (the minimum), `hi_pct` 99.9.
pub fn compute_norm_stats(stacks: &[BandStack], lo_pct: f64, hi_pct: f64) -> Result<NormStats> {
    if stacks.is_empty() {
        return Err(Error::Input("no band stacks supplied".into()));
    }
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return Err(Error::Config(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got {lo_pct} and {hi_pct}"
        )));
    }
    let mut stats = NormStats {
        x_min: [0.0; 4],
        x_max: [0.0; 4],
    };
    for b in 0..4 {
        let mut values: Vec<f64> = stacks
            .iter()
            .flat_map(|s| s.bands[b].iter().copied())
            .collect();
        values.sort_unstable_by(|a, c| a.partial_cmp(c).unwrap());
        stats.x_min[b] = percentile_sorted(&values, lo_pct);
        stats.x_max[b] = percentile_sorted(&values, hi_pct);
        if !(stats.x_max[b] > stats.x_min[b]) {
            return Err(Error::Degenerate(format!(
                "band {} ({}) is constant between the {lo_pct} and {hi_pct} percentiles \
                 (value {})",
                b, BAND_NAMES[b], stats.x_min[b]
            )));
        }
    }
    Ok(stats)
}

/// Normalizes every band into [0, 1]; returns the stack and the number of
/// samples clipped at either bound.
pub fn normalize(x: &BandStack, norm: &NormStats) -> Result<(BandStack, usize)> {
    norm.validate()?;
    let mut out = BandStack::zeros(x.height, x.width);
    let mut clipped = 0usize;
    for b in 0..4 {
        let lo = norm.x_min[b];
        let hi = norm.x_max[b];
        for (o, &v) in out.bands[b].iter_mut().zip(&x.bands[b]) {
            if v < lo || v > hi {
                clipped += 1;
            }
            *o = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
    }
    Ok((out, clipped))
}

/// Inverse of [`normalize`] for in-range samples.
pub fn denormalize(x: &BandStack, norm: &NormStats) -> Result<BandStack> {
    norm.validate()?;
    let mut out = BandStack::zeros(x.height, x.width);
    for b in 0..4 {
        for (o, &v) in out.bands[b].iter_mut().zip(&x.bands[b]) {
            *o = norm.denormalize_value(b, v);
        }
    }
    Ok(out)
}

/// Where a patch came from: stack id, epoch, and top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub stack: u32,
    pub epoch: u32,
    pub row: u32,
    pub col: u32,
}

/// One noisy/clean patch pair, stored channel-major (c_vv, c_i, c_q, c_vh),
/// each channel row-major, normalized f32.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub noisy: Vec<f32>,
    pub clean: Vec<f32>,
    pub provenance: Provenance,
    pub change_ratio: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub pairs: Vec<PatchPair>,
    pub norm: NormStats,
    pub patch: usize,
    pub channels: usize,
    /// Digest of the manifest (or other description) this set was built from.
    pub source_digest: String,
}

impl PatchDataset {
    /// Samples per patch tensor (channels * patch * patch).
    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }
}

/// Patch sampling parameters. `stack_id` only tags provenance.
#[derive(Debug, Clone)]
pub struct SampleConfig {
    pub count: usize,
    pub patch: usize,
    pub max_change_ratio: f64,
    pub seed: u64,
    pub stack_id: u32,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            count: 0,
            patch: 64,
            max_change_ratio: 0.10,
            seed: 0,
            stack_id: 0,
        }
    }
}

/// Integral image of a mask for O(1) changed-pixel counts per footprint.
struct MaskCounts {
    width: usize,
    sum: Vec<u32>,
}

impl MaskCounts {
    fn build(mask: &MaskRaster) -> Self {
        let w1 = mask.width + 1;
        let mut sum = vec![0u32; (mask.height + 1) * w1];
        for r in 0..mask.height {
            let mut acc = 0u32;
            for c in 0..mask.width {
                acc += u32::from(mask.data[r * mask.width + c] != 0);
                sum[(r + 1) * w1 + (c + 1)] = sum[r * w1 + (c + 1)] + acc;
            }
        }
        MaskCounts {
            width: mask.width,
            sum,
        }
    }

    /// Changed pixels in rows r0..r0+h, cols c0..c0+w.
    fn count(&self, r0: usize, c0: usize, h: usize, w: usize) -> u32 {
        let w1 = self.width + 1;
        // Corner-first order keeps the unsigned arithmetic non-negative.
        (self.sum[(r0 + h) * w1 + (c0 + w)] + self.sum[r0 * w1 + c0])
            - self.sum[r0 * w1 + (c0 + w)]
            - self.sum[(r0 + h) * w1 + c0]
    }
}

/// Extracts the normalized channel-major patch at (row, col).
fn extract_patch(bands: &BandStack, norm: &NormStats, row: usize, col: usize, patch: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(4 * patch * patch);
    for b in 0..4 {
        let plane = &bands.bands[b];
        for r in row..row + patch {
            for c in col..col + patch {
                out.push(norm.normalize_value(b, plane[r * bands.width + c]) as f32);
            }
        }
    }
    out
}

/// Draws (epoch, row, col) uniformly until `cfg.count` pairs pass the change
/// filter, or the attempt budget (100x count) runs out.
///
/// Each draw uses its own RNG substream keyed by the draw index, so the
/// provenance list depends only on the seed and geometry.
pub fn sample_patches(
    stack: &TemporalStack,
    reference: &C2Raster,
    mask: Option<&MaskRaster>,
    norm: &NormStats,
    cfg: &SampleConfig,
) -> Result<PatchDataset> {
    norm.validate()?;
    if cfg.count == 0 {
        return Err(Error::Config("patch count must be at least 1".into()));
    }
    let (height, width) = (stack.height(), stack.width());
    if stack.is_empty() {
        return Err(Error::Input("empty temporal stack".into()));
    }
    if reference.height != height || reference.width != width {
        return Err(Error::Geometry(format!(
            "reference is {}x{}, stack is {}x{}",
            reference.height, reference.width, height, width
        )));
    }
    if let Some(m) = mask {
        if m.height != height || m.width != width {
            return Err(Error::Geometry(format!(
                "mask is {}x{}, stack is {}x{}",
                m.height, m.width, height, width
            )));
        }
    }
    if cfg.patch == 0 || cfg.patch > height || cfg.patch > width {
        return Err(Error::Config(format!(
            "patch size {} does not fit a {height}x{width} raster",
            cfg.patch
        )));
    }
    if !(0.0..=1.0).contains(&cfg.max_change_ratio) {
        return Err(Error::Config(format!(
            "max_change_ratio must lie in [0, 1], got {}",
            cfg.max_change_ratio
        )));
    }

    let epoch_bands: Vec<BandStack> = stack
        .epochs
        .iter()
        .map(transform_raster)
        .collect::<Result<_>>()?;
    let reference_bands = transform_raster(reference)?;
    let counts = mask.map(MaskCounts::build);
    let area = (cfg.patch * cfg.patch) as f64;

    let budget = cfg.count.saturating_mul(100);
    let mut pairs = Vec::with_capacity(cfg.count);
    let mut attempts = 0usize;
    while pairs.len() < cfg.count && attempts < budget {
        let mut rng = substream(cfg.seed, [attempts as u64, 0, 0]);
        attempts += 1;
        let epoch = rng.random_range(0..stack.len());
        let row = rng.random_range(0..=height - cfg.patch);
        let col = rng.random_range(0..=width - cfg.patch);
        let change_ratio = match &counts {
            Some(c) => c.count(row, col, cfg.patch, cfg.patch) as f64 / area,
            None => 0.0,
        };
        if change_ratio >= cfg.max_change_ratio {
            continue;
        }
        pairs.push(PatchPair {
            noisy: extract_patch(&epoch_bands[epoch], norm, row, col, cfg.patch),
            clean: extract_patch(&reference_bands, norm, row, col, cfg.patch),
            provenance: Provenance {
                stack: cfg.stack_id,
                epoch: epoch as u32,
                row: row as u32,
                col: col as u32,
            },
            change_ratio: change_ratio as f32,
        });
    }
    let rate = pairs.len() as f64 / attempts.max(1) as f64;
    if pairs.len() < cfg.count {
        return Err(Error::SamplingBudget {
            requested: cfg.count,
            accepted: pairs.len(),
            attempts,
            rate,
        });
    }
    log::info!(
        "sampled {} patch pairs in {} attempts (acceptance rate {:.3})",
        pairs.len(),
        attempts,
        rate
    );
    Ok(PatchDataset {
        pairs,
        norm: *norm,
        patch: cfg.patch,
        channels: 4,
        source_digest: String::new(),
    })
}

// ---------------------------------------------------------------------------
// PSD1 container.
// ---------------------------------------------------------------------------
//
// Little-endian layout:
//   magic "PSD1", u32 version, u32 pair_count, u32 patch, u32 channels,
//   f64 x_min[4], f64 x_max[4], u32 digest_len, digest bytes,
//   then per pair: u32 stack, u32 epoch, u32 row, u32 col, f32 change_ratio,
//   f32 noisy[channels*patch*patch], f32 clean[channels*patch*patch].

const DS_MAGIC: [u8; 4] = *b"PSD1";
const DS_VERSION: u32 = 1;

pub fn write_dataset(path: impl AsRef<Path>, ds: &PatchDataset) -> Result<()> {
    let path = path.as_ref();
    ds.norm.validate()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(&DS_MAGIC).map_err(io_err)?;
    w.write_all(&DS_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(ds.pairs.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(ds.patch as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(ds.channels as u32).to_le_bytes()).map_err(io_err)?;
    for v in ds.norm.x_min.iter().chain(&ds.norm.x_max) {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    let digest = ds.source_digest.as_bytes();
    w.write_all(&(digest.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(digest).map_err(io_err)?;

    let plen = ds.patch_len();
    for (i, p) in ds.pairs.iter().enumerate() {
        if p.noisy.len() != plen || p.clean.len() != plen {
            return Err(Error::Dataset {
                path: path.into(),
                detail: format!("pair {i} has inconsistent patch length"),
            });
        }
        for v in [p.provenance.stack, p.provenance.epoch, p.provenance.row, p.provenance.col] {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        w.write_all(&p.change_ratio.to_le_bytes()).map_err(io_err)?;
        for v in p.noisy.iter().chain(&p.clean) {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

struct DsReader<'p, R> {
    inner: R,
    path: &'p Path,
}

impl<R: Read> DsReader<'_, R> {
    fn bytes<const N: usize>(&mut self, context: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Dataset {
            path: self.path.into(),
            detail: format!("truncated while reading {context}: {e}"),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, context: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(context)?))
    }

    fn f32s(&mut self, n: usize, context: &str) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; n * 4];
        self.inner.read_exact(&mut raw).map_err(|e| Error::Dataset {
            path: self.path.into(),
            detail: format!("truncated while reading {context}: {e}"),
        })?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<PatchDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = DsReader {
        inner: BufReader::new(file),
        path,
    };

    let magic: [u8; 4] = r.bytes("magic")?;
    if magic != DS_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: DS_MAGIC,
            found: magic,
        });
    }
    let version = r.u32("version")?;
    if version != DS_VERSION {
        return Err(Error::Dataset {
            path: path.into(),
            detail: format!("unsupported version {version}, expected {DS_VERSION}"),
        });
    }
    let pair_count = r.u32("pair count")? as usize;
    let patch = r.u32("patch size")? as usize;
    let channels = r.u32("channels")? as usize;
    if patch == 0 || channels == 0 {
        return Err(Error::Dataset {
            path: path.into(),
            detail: format!("invalid geometry: patch {patch}, channels {channels}"),
        });
    }
    let mut norm = NormStats {
        x_min: [0.0; 4],
        x_max: [0.0; 4],
    };
    for b in 0..4 {
        norm.x_min[b] = f64::from_le_bytes(r.bytes("norm stats")?);
    }
    for b in 0..4 {
        norm.x_max[b] = f64::from_le_bytes(r.bytes("norm stats")?);
    }
    let digest_len = r.u32("digest length")? as usize;
    if digest_len > 1 << 20 {
        return Err(Error::Dataset {
            path: path.into(),
            detail: format!("digest length {digest_len} is implausible"),
        });
    }
    let mut digest = vec![0u8; digest_len];
    r.inner.read_exact(&mut digest).map_err(|e| Error::Dataset {
        path: path.into(),
        detail: format!("truncated while reading digest: {e}"),
    })?;
    let source_digest = String::from_utf8(digest).map_err(|_| Error::Dataset {
        path: path.into(),
        detail: "digest is not valid UTF-8".into(),
    })?;

    let plen = channels * patch * patch;
    let mut pairs = Vec::with_capacity(pair_count);
    for i in 0..pair_count {
        let ctx = format!("pair {i} of {pair_count}");
        let provenance = Provenance {
            stack: r.u32(&ctx)?,
            epoch: r.u32(&ctx)?,
            row: r.u32(&ctx)?,
            col: r.u32(&ctx)?,
        };
        let change_ratio = f32::from_le_bytes(r.bytes(&ctx)?);
        let noisy = r.f32s(plen, &ctx)?;
        let clean = r.f32s(plen, &ctx)?;
        pairs.push(PatchPair {
            noisy,
            clean,
            provenance,
            change_ratio,
        });
    }
    Ok(PatchDataset {
        pairs,
        norm,
        patch,
        channels,
        source_digest,
    })
}
