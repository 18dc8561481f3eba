//! In-memory raster containers and the PSR1 on-disk format.
//!
//! All rasters are band-sequential and row-major. The PSR1 format is a
//! deliberately minimal little-endian container (see [`io`]); geocoding and
//! product metadata are out of scope.

pub mod io;
pub mod quicklook;

use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};

/// Sample type of a PSR1 payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    C64,
    C128,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::C64 => 2,
            DType::C128 => 3,
            DType::U8 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DType::F32,
            1 => DType::F64,
            2 => DType::C64,
            3 => DType::C128,
            4 => DType::U8,
            _ => return None,
        })
    }

    /// Bytes per sample on disk.
    pub fn sample_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::C64 => 8,
            DType::C128 => 16,
            DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::C64 => "c64",
            DType::C128 => "c128",
            DType::U8 => "u8",
        }
    }
}

/// Decoded PSR1 header. The payload size is fully determined by
/// `height * width * bands * dtype.sample_bytes()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterHeader {
    pub version: u32,
    pub height: u32,
    pub width: u32,
    pub bands: u32,
    pub dtype: DType,
}

impl RasterHeader {
    pub fn payload_bytes(&self) -> u64 {
        self.height as u64 * self.width as u64 * self.bands as u64 * self.dtype.sample_bytes() as u64
    }
}

/// Generic band-sequential raster: `data[band * h * w + row * w + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Raster<T> {
    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        Raster {
            height,
            width,
            bands,
            data: vec![T::default(); height * width * bands],
        }
    }
}

impl<T> Raster<T> {
    pub fn band(&self, b: usize) -> &[T] {
        let plane = self.height * self.width;
        &self.data[b * plane..(b + 1) * plane]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [T] {
        let plane = self.height * self.width;
        &mut self.data[b * plane..(b + 1) * plane]
    }
}

/// A decoded raster of any supported sample type.
#[derive(Debug, Clone)]
pub enum AnyRaster {
    F32(Raster<f32>),
    F64(Raster<f64>),
    C64(Raster<Complex32>),
    C128(Raster<Complex64>),
    U8(Raster<u8>),
}

impl AnyRaster {
    pub fn dtype(&self) -> DType {
        match self {
            AnyRaster::F32(_) => DType::F32,
            AnyRaster::F64(_) => DType::F64,
            AnyRaster::C64(_) => DType::C64,
            AnyRaster::C128(_) => DType::C128,
            AnyRaster::U8(_) => DType::U8,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            AnyRaster::F32(r) => (r.height, r.width, r.bands),
            AnyRaster::F64(r) => (r.height, r.width, r.bands),
            AnyRaster::C64(r) => (r.height, r.width, r.bands),
            AnyRaster::C128(r) => (r.height, r.width, r.bands),
            AnyRaster::U8(r) => (r.height, r.width, r.bands),
        }
    }

    /// "4-band f64"-style description used in type-mismatch errors.
    pub fn describe(&self) -> String {
        let (_, _, bands) = self.shape();
        format!("{}-band {}", bands, self.dtype().name())
    }
}

/// Per-pixel 2x2 Hermitian covariance image. Only the upper triangle is
/// stored: c21 is the conjugate of c12 by construction.
///
/// On disk this is a 4-band f64 PSR1 raster with planes
/// `[c11, c22, Re(c12), Im(c12)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct C2Raster {
    pub height: usize,
    pub width: usize,
    pub c11: Vec<f64>,
    pub c22: Vec<f64>,
    pub c12: Vec<Complex64>,
}

impl C2Raster {
    pub fn zeros(height: usize, width: usize) -> Self {
        C2Raster {
            height,
            width,
            c11: vec![0.0; height * width],
            c22: vec![0.0; height * width],
            c12: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Checks the storage invariant: nonnegative (and non-NaN) diagonals.
    pub fn validate(&self) -> Result<()> {
        for (i, (&a, &b)) in self.c11.iter().zip(&self.c22).enumerate() {
            if !(a >= 0.0) || !(b >= 0.0) {
                return Err(Error::InvalidCovariance {
                    row: i / self.width,
                    col: i % self.width,
                    detail: format!("diagonal must be nonnegative, got c11={a}, c22={b}"),
                });
            }
            if !self.c12[i].re.is_finite() || !self.c12[i].im.is_finite() {
                return Err(Error::InvalidCovariance {
                    row: i / self.width,
                    col: i % self.width,
                    detail: format!("c12 must be finite, got {}", self.c12[i]),
                });
            }
        }
        Ok(())
    }

    pub fn same_geometry(&self, other: &C2Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Per-pixel total power c11 + c22.
    pub fn span(&self) -> Vec<f64> {
        self.c11.iter().zip(&self.c22).map(|(a, b)| a + b).collect()
    }

    fn to_planes(&self) -> Raster<f64> {
        let plane = self.len();
        let mut data = Vec::with_capacity(4 * plane);
        data.extend_from_slice(&self.c11);
        data.extend_from_slice(&self.c22);
        data.extend(self.c12.iter().map(|z| z.re));
        data.extend(self.c12.iter().map(|z| z.im));
        Raster {
            height: self.height,
            width: self.width,
            bands: 4,
            data,
        }
    }

    fn from_planes(r: &Raster<f64>) -> Self {
        debug_assert_eq!(r.bands, 4);
        let c12 = r
            .band(2)
            .iter()
            .zip(r.band(3))
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        C2Raster {
            height: r.height,
            width: r.width,
            c11: r.band(0).to_vec(),
            c22: r.band(1).to_vec(),
            c12,
        }
    }
}

/// Band order of a [`BandStack`]: the four intensities produced by the
/// covariance-to-intensity transform.
pub const BAND_NAMES: [&str; 4] = ["c_vv", "c_i", "c_q", "c_vh"];

/// Four co-registered nonnegative intensity bands in the fixed order
/// (c_vv, c_i, c_q, c_vh). On disk: 4-band f64 PSR1.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    pub height: usize,
    pub width: usize,
    /// Indexed by band in [`BAND_NAMES`] order, each plane row-major.
    pub bands: [Vec<f64>; 4],
}

impl BandStack {
    pub fn zeros(height: usize, width: usize) -> Self {
        BandStack {
            height,
            width,
            bands: std::array::from_fn(|_| vec![0.0; height * width]),
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that every sample is a nonnegative intensity.
    pub fn validate(&self) -> Result<()> {
        for (b, plane) in self.bands.iter().enumerate() {
            if let Some(i) = plane.iter().position(|v| !(*v >= 0.0)) {
                return Err(Error::Input(format!(
                    "band {} ({}) has a negative or NaN sample {} at pixel ({}, {})",
                    b,
                    BAND_NAMES[b],
                    plane[i],
                    i / self.width,
                    i % self.width,
                )));
            }
        }
        Ok(())
    }

    fn to_planes(&self) -> Raster<f64> {
        let mut data = Vec::with_capacity(4 * self.len());
        for b in &self.bands {
            data.extend_from_slice(b);
        }
        Raster {
            height: self.height,
            width: self.width,
            bands: 4,
            data,
        }
    }

    fn from_planes(r: &Raster<f64>) -> Self {
        debug_assert_eq!(r.bands, 4);
        BandStack {
            height: r.height,
            width: r.width,
            bands: std::array::from_fn(|b| r.band(b).to_vec()),
        }
    }
}

/// Single-band u8 image; change masks store 1 = changed, 0 = unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskRaster {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), height * width);
        MaskRaster {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MaskRaster {
            height,
            width,
            data: vec![0; height * width],
        }
    }
}

/// An ordered set of co-registered covariance epochs with acquisition dates.
#[derive(Debug, Clone)]
pub struct TemporalStack {
    pub epochs: Vec<C2Raster>,
    /// ISO-8601 dates (YYYY-MM-DD), one per epoch.
    pub dates: Vec<String>,
}

impl TemporalStack {
    pub fn new(epochs: Vec<C2Raster>, dates: Vec<String>) -> Result<Self> {
        if epochs.len() != dates.len() {
            return Err(Error::Geometry(format!(
                "stack has {} epochs but {} dates",
                epochs.len(),
                dates.len()
            )));
        }
        if let Some(first) = epochs.first() {
            for (i, e) in epochs.iter().enumerate() {
                if !first.same_geometry(e) {
                    return Err(Error::Geometry(format!(
                        "epoch {} is {}x{}, epoch 0 is {}x{}",
                        i, e.height, e.width, first.height, first.width
                    )));
                }
            }
        }
        Ok(TemporalStack { epochs, dates })
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn height(&self) -> usize {
        self.epochs.first().map_or(0, |e| e.height)
    }

    pub fn width(&self) -> usize {
        self.epochs.first().map_or(0, |e| e.width)
    }
}
