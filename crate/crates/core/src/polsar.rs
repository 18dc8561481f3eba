//! Covariance/intensity transforms and covariance-domain averaging.
//!
//! The dual-pol covariance matrix C2 = [[c11, c12], [conj(c12), c22]] is
//! mapped to four nonnegative real intensities so a real-valued filter can
//! process it, and back. The mapping is exactly invertible:
//!
//! ```text
//! c_vv = c11                      c_i = c11 + c22 + 2 Re(c12)
//! c_vh = c22                      c_q = c11 + c22 + 2 Im(c12)
//! span = c_vv + c_vh
//! c12  = 0.5 [(c_i - span) + j (c_q - span)]
//! ```
//!
//! Sign convention: c_q is the intensity of S_VV + j S_VH, i.e.
//! span + 2 Im(c12). The opposite convention (span - 2 Im(c12)) would make
//! the quad-to-covariance inverse return the conjugate of c12; this one keeps
//! the pair a bijection.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::raster::{BandStack, C2Raster, TemporalStack};

/// Relative tolerance on the positive-semidefiniteness predicate
/// |c12|^2 <= c11 * c22.
pub const PSD_REL_TOL: f64 = 1e-9;

/// One 2x2 Hermitian covariance matrix; only the upper triangle is stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub c11: f64,
    pub c22: f64,
    pub c12: Complex64,
}

impl Cov2 {
    pub fn new(c11: f64, c22: f64, c12: Complex64) -> Self {
        Cov2 { c11, c22, c12 }
    }

    pub fn diag(c11: f64, c22: f64) -> Self {
        Cov2 {
            c11,
            c22,
            c12: Complex64::new(0.0, 0.0),
        }
    }

    pub fn zero() -> Self {
        Cov2::diag(0.0, 0.0)
    }

    /// Determinant c11 c22 - |c12|^2 (real for Hermitian matrices).
    pub fn det(&self) -> f64 {
        self.c11 * self.c22 - self.c12.norm_sqr()
    }

    /// Total power c11 + c22.
    pub fn span(&self) -> f64 {
        self.c11 + self.c22
    }

    /// Positive semidefiniteness within [`PSD_REL_TOL`]: nonnegative diagonal
    /// and |c12|^2 <= c11 c22 (relative slack). A zero diagonal product
    /// requires c12 = 0.
    pub fn is_psd(&self) -> bool {
        self.c11 >= 0.0
            && self.c22 >= 0.0
            && self.c12.re.is_finite()
            && self.c12.im.is_finite()
            && self.c12.norm_sqr() <= self.c11 * self.c22 * (1.0 + PSD_REL_TOL)
    }
}

/// The four intensities of the covariance-to-intensity transform, in band
/// order (c_vv, c_i, c_q, c_vh).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityQuad {
    pub c_vv: f64,
    pub c_i: f64,
    pub c_q: f64,
    pub c_vh: f64,
}

impl IntensityQuad {
    pub fn span(&self) -> f64 {
        self.c_vv + self.c_vh
    }
}

/// Maps a valid covariance matrix to its four intensities.
///
/// PSD of the input guarantees all four outputs are nonnegative
/// (|2 Re c12| <= 2 |c12| <= c11 + c22, likewise for Im); tiny negative
/// rounding residue is clamped to 0.
pub fn forward_transform(c: Cov2) -> Result<IntensityQuad> {
    if !c.is_psd() {
        return Err(Error::Input(format!(
            "covariance is not positive semidefinite within {PSD_REL_TOL:.0e} relative: \
             c11={}, c22={}, |c12|^2={}",
            c.c11,
            c.c22,
            c.c12.norm_sqr()
        )));
    }
    let span = c.c11 + c.c22;
    Ok(IntensityQuad {
        c_vv: c.c11,
        c_i: (span + 2.0 * c.c12.re).max(0.0),
        c_q: (span + 2.0 * c.c12.im).max(0.0),
        c_vh: c.c22,
    })
}

/// Exact left inverse of [`forward_transform`].
pub fn inverse_transform(q: IntensityQuad) -> Result<Cov2> {
    for (name, v) in [
        ("c_vv", q.c_vv),
        ("c_i", q.c_i),
        ("c_q", q.c_q),
        ("c_vh", q.c_vh),
    ] {
        if !(v >= 0.0) {
            return Err(Error::Input(format!(
                "intensity {name} must be nonnegative, got {v}"
            )));
        }
    }
    let span = q.c_vv + q.c_vh;
    Ok(Cov2 {
        c11: q.c_vv,
        c22: q.c_vh,
        c12: Complex64::new(0.5 * (q.c_i - span), 0.5 * (q.c_q - span)),
    })
}

/// Pixel-wise [`forward_transform`] over a raster. Strict: the first non-PSD
/// pixel aborts with its location (run [`project_psd_raster`] first to repair).
pub fn transform_raster(c2: &C2Raster) -> Result<BandStack> {
    let mut out = BandStack::zeros(c2.height, c2.width);
    for i in 0..c2.len() {
        let q = forward_transform(Cov2::new(c2.c11[i], c2.c22[i], c2.c12[i])).map_err(|e| {
            Error::InvalidCovariance {
                row: i / c2.width,
                col: i % c2.width,
                detail: e.to_string(),
            }
        })?;
        out.bands[0][i] = q.c_vv;
        out.bands[1][i] = q.c_i;
        out.bands[2][i] = q.c_q;
        out.bands[3][i] = q.c_vh;
    }
    Ok(out)
}

/// Pixel-wise inverse of [`transform_raster`].
///
/// Filtered bands may carry negative values (the network output space is
/// unconstrained); they are clamped to 0 before inversion and the number of
/// clamped samples is returned.
pub fn untransform_raster(b: &BandStack) -> (C2Raster, usize) {
    let mut out = C2Raster::zeros(b.height, b.width);
    let mut clamped = 0usize;
    for i in 0..b.len() {
        let mut v = [0.0f64; 4];
        for (band, slot) in b.bands.iter().zip(&mut v) {
            let x = band[i];
            if x < 0.0 {
                clamped += 1;
                *slot = 0.0;
            } else {
                *slot = x;
            }
        }
        let span = v[0] + v[3];
        out.c11[i] = v[0];
        out.c22[i] = v[3];
        out.c12[i] = Complex64::new(0.5 * (v[1] - span), 0.5 * (v[2] - span));
    }
    (out, clamped)
}

/// Offsets of a window of size `m` centred on a pixel: `[-((m-1)/2), m/2]`.
/// Odd sizes are symmetric; even sizes extend one pixel further down/right.
#[inline]
fn window_bounds(center: usize, m: usize, limit: usize) -> (usize, usize) {
    let lo = center.saturating_sub((m - 1) / 2);
    let hi = (center + m / 2).min(limit - 1);
    (lo, hi)
}

/// Summed-area table with a zero top row/left column, for O(1) window sums.
struct Integral {
    width: usize,
    sum: Vec<f64>,
}

impl Integral {
    fn build(data: &[f64], height: usize, width: usize) -> Self {
        let w1 = width + 1;
        let mut sum = vec![0.0; (height + 1) * w1];
        for r in 0..height {
            let mut row_acc = 0.0;
            for c in 0..width {
                row_acc += data[r * width + c];
                sum[(r + 1) * w1 + (c + 1)] = sum[r * w1 + (c + 1)] + row_acc;
            }
        }
        Integral { width, sum }
    }

    /// Sum over rows r0..=r1, cols c0..=c1 (inclusive).
    #[inline]
    fn window(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        let w1 = self.width + 1;
        self.sum[(r1 + 1) * w1 + (c1 + 1)] - self.sum[r0 * w1 + (c1 + 1)]
            - self.sum[(r1 + 1) * w1 + c0]
            + self.sum[r0 * w1 + c0]
    }
}

/// Sliding-window mean of every covariance entry. `win_az` is the window
/// height (rows), `win_rg` the width (columns); even sizes are accepted.
/// Border windows shrink to the in-image subset rather than reflecting data.
/// Averaging valid matrices yields valid matrices (PSD is preserved under
/// convex combination).
pub fn boxcar_multilook(c2: &C2Raster, win_az: usize, win_rg: usize) -> Result<C2Raster> {
    if win_az < 1 || win_rg < 1 {
        return Err(Error::Config(format!(
            "multilook window {win_az}x{win_rg} must be at least 1x1"
        )));
    }
    if win_az > c2.height || win_rg > c2.width {
        return Err(Error::Config(format!(
            "multilook window {win_az}x{win_rg} exceeds raster {}x{}",
            c2.height, c2.width
        )));
    }
    let re: Vec<f64> = c2.c12.iter().map(|z| z.re).collect();
    let im: Vec<f64> = c2.c12.iter().map(|z| z.im).collect();
    let planes = [
        Integral::build(&c2.c11, c2.height, c2.width),
        Integral::build(&c2.c22, c2.height, c2.width),
        Integral::build(&re, c2.height, c2.width),
        Integral::build(&im, c2.height, c2.width),
    ];
    let mut out = C2Raster::zeros(c2.height, c2.width);
    for r in 0..c2.height {
        let (r0, r1) = window_bounds(r, win_az, c2.height);
        for c in 0..c2.width {
            let (c0, c1) = window_bounds(c, win_rg, c2.width);
            let count = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            let i = r * c2.width + c;
            out.c11[i] = planes[0].window(r0, r1, c0, c1) / count;
            out.c22[i] = planes[1].window(r0, r1, c0, c1) / count;
            out.c12[i] = Complex64::new(
                planes[2].window(r0, r1, c0, c1) / count,
                planes[3].window(r0, r1, c0, c1) / count,
            );
        }
    }
    Ok(out)
}

/// Pixel-wise mean of all covariance entries across the epochs of a stack.
pub fn temporal_average(stack: &TemporalStack) -> Result<C2Raster> {
    if stack.len() < 2 {
        return Err(Error::Input(format!(
            "temporal average needs at least 2 epochs, got {}",
            stack.len()
        )));
    }
    let mut out = C2Raster::zeros(stack.height(), stack.width());
    for epoch in &stack.epochs {
        for i in 0..out.len() {
            out.c11[i] += epoch.c11[i];
            out.c22[i] += epoch.c22[i];
            out.c12[i] += epoch.c12[i];
        }
    }
    let k = stack.len() as f64;
    for i in 0..out.len() {
        out.c11[i] /= k;
        out.c22[i] /= k;
        out.c12[i] /= k;
    }
    Ok(out)
}

/// Projects a Hermitian matrix onto the valid (PSD) cone: the diagonal is
/// clamped at 0, then c12 is rescaled to magnitude sqrt(c11 c22) preserving
/// its phase. Exact fixed point: valid matrices pass through unchanged, and
/// the output always satisfies the validity predicate bit-for-bit (the
/// rescaled magnitude is nudged down while rounding leaves it above the
/// bound), so the projection is idempotent.
pub fn project_psd(c: Cov2) -> Cov2 {
    let c11 = c.c11.max(0.0);
    let c22 = c.c22.max(0.0);
    let prod = c11 * c22;
    let mut c12 = c.c12;
    if !(c12.re.is_finite() && c12.im.is_finite()) {
        c12 = Complex64::new(0.0, 0.0);
    } else if c12.norm_sqr() > prod {
        if prod == 0.0 {
            c12 = Complex64::new(0.0, 0.0);
        } else {
            c12 *= prod.sqrt() / c12.norm();
            while c12.norm_sqr() > prod {
                c12 *= 1.0 - f64::EPSILON;
            }
        }
    }
    Cov2 { c11, c22, c12 }
}

/// Pixel-wise [`project_psd`]; returns the number of adjusted pixels.
pub fn project_psd_raster(c2: &mut C2Raster) -> usize {
    let mut adjusted = 0usize;
    for i in 0..c2.len() {
        let before = Cov2::new(c2.c11[i], c2.c22[i], c2.c12[i]);
        let after = project_psd(before);
        if after != before {
            adjusted += 1;
            c2.c11[i] = after.c11;
            c2.c22[i] = after.c22;
            c2.c12[i] = after.c12;
        }
    }
    adjusted
}
