//! Despeckling quality indices over user-selected regions of interest.
//!
//! Three indices are provided, each answering a different question about a
//! filtered covariance raster:
//!
//! * [`enl`] — equivalent number of looks, the smoothing yardstick. The
//!   polarimetric form uses full-matrix trace moments rather than a single
//!   intensity channel, so cross-pol correlation is accounted for.
//! * [`epd_roa`] — edge preservation degree based on the ratio of averages
//!   of adjacent span pixels, suited to multiplicative speckle. 1.0 means
//!   edges survived untouched; below 1.0 they were flattened.
//! * [`ssim`] — structural similarity between two real images (span images
//!   by convention here), needing a reference.
//!
//! All three are pure functions over read-only rasters. ENL and EPD-ROA are
//! no-reference indices; SSIM compares against a reference image supplied by
//! the caller (typically a temporal average of the stack).

use serde::{Deserialize, Serialize};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::raster::C2Raster;

/// Rectangular region of interest in pixel coordinates, labelled so reports
/// and error messages can name it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionOfInterest {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
    pub label: String,
}

impl RegionOfInterest {
    /// A region covering the whole raster.
    pub fn full(height: usize, width: usize, label: &str) -> Self {
        RegionOfInterest {
            row0: 0,
            col0: 0,
            height,
            width,
            label: label.to_string(),
        }
    }

    /// Checks the region against a raster of `rows` x `cols` pixels: it must
    /// lie fully inside and cover at least 4 pixels (statistics over fewer
    /// are meaningless).
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.height * self.width < 4 {
            return Err(Error::Roi {
                label: self.label.clone(),
                detail: format!(
                    "area {}x{} is below the 4-pixel minimum",
                    self.height, self.width
                ),
            });
        }
        if self.row0 + self.height > rows || self.col0 + self.width > cols {
            return Err(Error::Roi {
                label: self.label.clone(),
                detail: format!(
                    "{}x{} region at ({}, {}) exceeds the {}x{} raster",
                    self.height, self.width, self.row0, self.col0, rows, cols
                ),
            });
        }
        Ok(())
    }
}

/// Result of the ENL estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnlEstimate {
    pub value: f64,
    /// Set when the region is perfectly constant: the variance term vanishes
    /// and the estimator diverges, reported as +infinity rather than an
    /// error because constant synthetic inputs are legitimate.
    pub degenerate: bool,
}

/// Equivalent number of looks of a covariance raster over a homogeneous
/// region, in the polarimetric trace-moment form
///
/// ```text
/// ENL = [tr(mean C)]^2 / ( mean tr(C C) - tr(mean C * mean C) )
/// ```
///
/// where the means are spatial averages over the region and, for a Hermitian
/// 2x2 matrix, tr(C C) = c11^2 + c22^2 + 2 |c12|^2. For L-look Wishart
/// samples the expectation of the denominator is tr(mean C)^2 / L, so the
/// estimator recovers L regardless of the underlying covariance. The value
/// is invariant to global positive scaling of the raster.
pub fn enl(c2: &C2Raster, roi: &RegionOfInterest) -> Result<EnlEstimate> {
    roi.validate(c2.height, c2.width)?;
    let n = (roi.height * roi.width) as f64;
    let mut m11 = 0.0;
    let mut m22 = 0.0;
    let mut m12 = Complex64::new(0.0, 0.0);
    let mut tr_sq = 0.0;
    for r in roi.row0..roi.row0 + roi.height {
        for c in roi.col0..roi.col0 + roi.width {
            let i = c2.idx(r, c);
            let (a, b, z) = (c2.c11[i], c2.c22[i], c2.c12[i]);
            m11 += a;
            m22 += b;
            m12 += z;
            tr_sq += a * a + b * b + 2.0 * z.norm_sqr();
        }
    }
    m11 /= n;
    m22 /= n;
    m12 /= n;
    let tr_mean = m11 + m22;
    let tr_mean_prod = m11 * m11 + m22 * m22 + 2.0 * m12.norm_sqr();
    let denom = tr_sq / n - tr_mean_prod;
    if denom <= 0.0 {
        return Ok(EnlEstimate {
            value: f64::INFINITY,
            degenerate: true,
        });
    }
    Ok(EnlEstimate {
        value: tr_mean * tr_mean / denom,
        degenerate: false,
    })
}

/// Direction along which adjacent-pixel pairs are formed for EPD-ROA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Result of the EPD-ROA estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpdEstimate {
    pub value: f64,
    /// Adjacent-pixel pairs that entered both sums.
    pub pairs: usize,
    /// Pairs dropped because the second pixel had zero span in either image.
    /// Real span is rarely exactly zero; simulated data can be, and a
    /// dropped pair must leave both sums to keep the identity
    /// `epd_roa(x, x) = 1` exact.
    pub skipped: usize,
}

/// Edge preservation degree based on the ratio of averages, computed on the
/// span (c11 + c22) of both rasters:
///
/// ```text
/// EPD-ROA = sum_i |SPAN_f(i) / SPAN_f(i')| / sum_i |SPAN_o(i) / SPAN_o(i')|
/// ```
///
/// over the N adjacent pixel pairs (i, i') inside the region along the
/// chosen direction, with `f` the filtered and `o` the original raster.
/// An aggressive filter flattens the filtered ratios towards 1 while the
/// original ratios stay spread, pushing the index below 1.
pub fn epd_roa(
    original: &C2Raster,
    filtered: &C2Raster,
    roi: &RegionOfInterest,
    direction: Direction,
) -> Result<EpdEstimate> {
    if !original.same_geometry(filtered) {
        return Err(Error::Geometry(format!(
            "original is {}x{}, filtered is {}x{}",
            original.height, original.width, filtered.height, filtered.width
        )));
    }
    roi.validate(original.height, original.width)?;
    let (pair_rows, pair_cols) = match direction {
        Direction::Horizontal => (roi.height, roi.width.saturating_sub(1)),
        Direction::Vertical => (roi.height.saturating_sub(1), roi.width),
    };
    if pair_rows == 0 || pair_cols == 0 {
        return Err(Error::Roi {
            label: roi.label.clone(),
            detail: format!(
                "{}x{} region has no adjacent-pixel pairs in the {direction:?} direction",
                roi.height, roi.width
            ),
        });
    }

    let span_at = |c2: &C2Raster, i: usize| c2.c11[i] + c2.c22[i];
    let mut num = 0.0;
    let mut den = 0.0;
    let mut pairs = 0usize;
    let mut skipped = 0usize;
    for r in roi.row0..roi.row0 + pair_rows {
        for c in roi.col0..roi.col0 + pair_cols {
            let i1 = original.idx(r, c);
            let i2 = match direction {
                Direction::Horizontal => original.idx(r, c + 1),
                Direction::Vertical => original.idx(r + 1, c),
            };
            let (o2, f2) = (span_at(original, i2), span_at(filtered, i2));
            if o2 == 0.0 || f2 == 0.0 {
                skipped += 1;
                continue;
            }
            num += (span_at(filtered, i1) / f2).abs();
            den += (span_at(original, i1) / o2).abs();
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Roi {
            label: roi.label.clone(),
            detail: "every adjacent-pixel pair was skipped (zero span)".into(),
        });
    }
    if den == 0.0 {
        return Err(Error::Degenerate(format!(
            "EPD-ROA denominator is zero over ROI `{}`",
            roi.label
        )));
    }
    Ok(EpdEstimate {
        value: num / den,
        pairs,
        skipped,
    })
}

/// The headline EPD-ROA figure: the mean of the horizontal and vertical
/// indices. Pair and skip counts are summed over both directions.
pub fn epd_roa_combined(
    original: &C2Raster,
    filtered: &C2Raster,
    roi: &RegionOfInterest,
) -> Result<EpdEstimate> {
    let h = epd_roa(original, filtered, roi, Direction::Horizontal)?;
    let v = epd_roa(original, filtered, roi, Direction::Vertical)?;
    Ok(EpdEstimate {
        value: 0.5 * (h.value + v.value),
        pairs: h.pairs + v.pairs,
        skipped: h.skipped + v.skipped,
    })
}

/// Stabilization-constant convention for SSIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimConvention {
    /// C1 = 0.01 L and C2 = 0.03 L, taken verbatim.
    Literal,
    /// The common image-processing form C1 = (0.01 L)^2, C2 = (0.03 L)^2.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Side of the square sliding window, uniform weights.
    pub window: usize,
    /// Dynamic range L of the data, entering the stabilization constants.
    pub dynamic_range: f64,
    pub convention: SsimConvention,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 8,
            dynamic_range: 1.0,
            convention: SsimConvention::Literal,
        }
    }
}

/// Mean structural similarity between two real images over a region:
///
/// ```text
/// SSIM = (2 mx my + C1)(2 sxy + C2) / ((mx^2 + my^2 + C1)(sx^2 + sy^2 + C2))
/// ```
///
/// evaluated per sliding-window position (windows fully inside the region,
/// uniform weights) and averaged. Means, variances and the covariance are
/// accumulated by one shared code path, which makes `ssim(x, x) = 1` exact
/// and the function symmetric in its arguments bit for bit. The result lies
/// in [-1, 1].
///
/// `x` and `y` are row-major images of `rows` x `cols` pixels — span images
/// by convention, but any real image works.
pub fn ssim(
    x: &[f64],
    y: &[f64],
    rows: usize,
    cols: usize,
    roi: &RegionOfInterest,
    params: &SsimParams,
) -> Result<f64> {
    if x.len() != rows * cols || y.len() != rows * cols {
        return Err(Error::Geometry(format!(
            "expected {rows}x{cols} = {} samples, got {} and {}",
            rows * cols,
            x.len(),
            y.len()
        )));
    }
    roi.validate(rows, cols)?;
    if params.window == 0 {
        return Err(Error::Config("SSIM window must be at least 1".into()));
    }
    if params.window > roi.height || params.window > roi.width {
        return Err(Error::Roi {
            label: roi.label.clone(),
            detail: format!(
                "SSIM window {} exceeds the {}x{} region",
                params.window, roi.height, roi.width
            ),
        });
    }
    if !(params.dynamic_range > 0.0) {
        return Err(Error::Config(format!(
            "SSIM dynamic range must be positive, got {}",
            params.dynamic_range
        )));
    }
    let (c1, c2) = match params.convention {
        SsimConvention::Literal => (0.01 * params.dynamic_range, 0.03 * params.dynamic_range),
        SsimConvention::Squared => (
            (0.01 * params.dynamic_range).powi(2),
            (0.03 * params.dynamic_range).powi(2),
        ),
    };

    let w = params.window;
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in roi.row0..=roi.row0 + roi.height - w {
        for c0 in roi.col0..=roi.col0 + roi.width - w {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for r in r0..r0 + w {
                let base = r * cols;
                for c in c0..c0 + w {
                    sx += x[base + c];
                    sy += y[base + c];
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let mut vxx = 0.0;
            let mut vyy = 0.0;
            let mut vxy = 0.0;
            for r in r0..r0 + w {
                let base = r * cols;
                for c in c0..c0 + w {
                    let dx = x[base + c] - mx;
                    let dy = y[base + c] - my;
                    vxx += dx * dx;
                    vyy += dy * dy;
                    vxy += dx * dy;
                }
            }
            vxx /= n;
            vyy /= n;
            vxy /= n;
            let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
            let den = (mx * mx + my * my + c1) * (vxx + vyy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}
