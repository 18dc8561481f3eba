//! PSR1 file format.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `"PSR1"`                 |
//! | 4      | 4    | u32 version (currently 1)      |
//! | 8      | 4    | u32 height                     |
//! | 12     | 4    | u32 width                      |
//! | 16     | 4    | u32 bands                      |
//! | 20     | 1    | u8 dtype code                  |
//! | 21     | 1    | u8 layout code (0 = band-seq)  |
//! | 22     | 2    | reserved, written as zero      |
//! | 24     | ...  | band-sequential samples        |
//!
//! Complex samples store the real part first. Reserved bytes are ignored on
//! read so the format can grow without breaking old readers.

use std::path::Path;

use num_complex::{Complex32, Complex64};

use super::{AnyRaster, BandStack, C2Raster, DType, MaskRaster, Raster, RasterHeader};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PSR1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
const LAYOUT_BAND_SEQUENTIAL: u8 = 0;

/// Fixed-size sample codec; implementations mirror the dtype table above.
pub trait Sample: Copy {
    const DTYPE: DType;
    fn put(self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

impl Sample for f32 {
    const DTYPE: DType = DType::F32;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Sample for f64 {
    const DTYPE: DType = DType::F64;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Sample for u8 {
    const DTYPE: DType = DType::U8;
    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn get(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Sample for Complex32 {
    const DTYPE: DType = DType::C64;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        Complex32::new(f32::from_le_bytes(bytes[..4].try_into().unwrap()),
                       f32::from_le_bytes(bytes[4..].try_into().unwrap()))
    }
}

impl Sample for Complex64 {
    const DTYPE: DType = DType::C128;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        Complex64::new(f64::from_le_bytes(bytes[..8].try_into().unwrap()),
                       f64::from_le_bytes(bytes[8..].try_into().unwrap()))
    }
}

fn encode<T: Sample>(r: &Raster<T>) -> Result<Vec<u8>> {
    let dims_ok = r.height >= 1 && r.width >= 1 && r.bands >= 1;
    if !dims_ok || r.data.len() != r.height * r.width * r.bands {
        return Err(Error::Input(format!(
            "raster dims {}x{}x{} inconsistent with {} samples",
            r.height,
            r.width,
            r.bands,
            r.data.len()
        )));
    }
    let (h, w, b): (u32, u32, u32) = match (r.height.try_into(), r.width.try_into(), r.bands.try_into()) {
        (Ok(h), Ok(w), Ok(b)) => (h, w, b),
        _ => return Err(Error::Input("raster dimension exceeds u32".into())),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + r.data.len() * T::DTYPE.sample_bytes());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(LAYOUT_BAND_SEQUENTIAL);
    out.extend_from_slice(&[0, 0]);
    for &v in &r.data {
        v.put(&mut out);
    }
    Ok(out)
}

fn decode<T: Sample>(header: &RasterHeader, payload: &[u8]) -> Raster<T> {
    let step = T::DTYPE.sample_bytes();
    let data = payload.chunks_exact(step).map(T::get).collect();
    Raster {
        height: header.height as usize,
        width: header.width as usize,
        bands: header.bands as usize,
        data,
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<RasterHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 0,
            actual: bytes.len() as u64,
            header_len: HEADER_LEN as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: MAGIC,
            found: magic,
        });
    }
    let header_err = |field, offset, detail: String| Error::Header {
        path: path.into(),
        field,
        offset,
        detail,
    };
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(header_err("version", 4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let height = u32_at(bytes, 8);
    let width = u32_at(bytes, 12);
    let bands = u32_at(bytes, 16);
    if height == 0 {
        return Err(header_err("height", 8, "must be at least 1".into()));
    }
    if width == 0 {
        return Err(header_err("width", 12, "must be at least 1".into()));
    }
    if bands == 0 {
        return Err(header_err("bands", 16, "must be at least 1".into()));
    }
    let dtype = DType::from_code(bytes[20])
        .ok_or_else(|| header_err("dtype", 20, format!("unknown dtype code {}", bytes[20])))?;
    if bytes[21] != LAYOUT_BAND_SEQUENTIAL {
        return Err(header_err("layout", 21, format!("unknown layout code {}", bytes[21])));
    }
    Ok(RasterHeader {
        version,
        height,
        width,
        bands,
        dtype,
    })
}

/// Reads any PSR1 raster, validating header and payload size.
pub fn read_any(path: impl AsRef<Path>) -> Result<AnyRaster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &bytes)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != header.payload_bytes() {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header.payload_bytes(),
            actual: payload.len() as u64,
            header_len: HEADER_LEN as u64,
        });
    }
    Ok(match header.dtype {
        DType::F32 => AnyRaster::F32(decode(&header, payload)),
        DType::F64 => AnyRaster::F64(decode(&header, payload)),
        DType::C64 => AnyRaster::C64(decode(&header, payload)),
        DType::C128 => AnyRaster::C128(decode(&header, payload)),
        DType::U8 => AnyRaster::U8(decode(&header, payload)),
    })
}

/// Reads only the header. Used to report file shape without decoding.
pub fn read_header(path: impl AsRef<Path>) -> Result<RasterHeader> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_header(path, &bytes)
}

/// Writes a generic raster. The write is all-or-nothing: bytes are assembled
/// in memory first, so a failed invariant never leaves a partial file.
pub fn write_raster<T: Sample>(path: impl AsRef<Path>, raster: &Raster<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(raster)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn expect_f64_4band(path: &Path, any: AnyRaster, expected: &str) -> Result<Raster<f64>> {
    match any {
        AnyRaster::F64(r) if r.bands == 4 => Ok(r),
        other => Err(Error::RasterType {
            path: path.into(),
            expected: expected.into(),
            found: other.describe(),
        }),
    }
}

/// Reads a covariance raster (4-band f64 planes `[c11, c22, Re c12, Im c12]`).
pub fn read_c2(path: impl AsRef<Path>) -> Result<C2Raster> {
    let path = path.as_ref();
    let r = expect_f64_4band(path, read_any(path)?, "a 4-band f64 covariance raster")?;
    Ok(C2Raster::from_planes(&r))
}

/// Writes a covariance raster, refusing invalid matrices before any I/O.
pub fn write_c2(path: impl AsRef<Path>, c2: &C2Raster) -> Result<()> {
    c2.validate()?;
    write_raster(path, &c2.to_planes())
}

/// Reads a 4-band intensity stack in (c_vv, c_i, c_q, c_vh) order.
pub fn read_bands(path: impl AsRef<Path>) -> Result<BandStack> {
    let path = path.as_ref();
    let r = expect_f64_4band(path, read_any(path)?, "a 4-band f64 intensity stack")?;
    Ok(BandStack::from_planes(&r))
}

/// Writes an intensity stack, refusing negative samples.
pub fn write_bands(path: impl AsRef<Path>, bands: &BandStack) -> Result<()> {
    bands.validate()?;
    write_raster(path, &bands.to_planes())
}

/// Reads a single-band u8 mask.
pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskRaster> {
    let path = path.as_ref();
    match read_any(path)? {
        AnyRaster::U8(r) if r.bands == 1 => Ok(MaskRaster {
            height: r.height,
            width: r.width,
            data: r.data,
        }),
        other => Err(Error::RasterType {
            path: path.into(),
            expected: "a 1-band u8 mask".into(),
            found: other.describe(),
        }),
    }
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MaskRaster) -> Result<()> {
    write_raster(
        path,
        &Raster {
            height: mask.height,
            width: mask.width,
            bands: 1,
            data: mask.data.clone(),
        },
    )
}

/// Writes a single-band f32 image (e.g. a change-probability map).
pub fn write_f32_plane(path: impl AsRef<Path>, height: usize, width: usize, data: &[f32]) -> Result<()> {
    write_raster(
        path,
        &Raster {
            height,
            width,
            bands: 1,
            data: data.to_vec(),
        },
    )
}

pub fn read_f32_plane(path: impl AsRef<Path>) -> Result<Raster<f32>> {
    let path = path.as_ref();
    match read_any(path)? {
        AnyRaster::F32(r) if r.bands == 1 => Ok(r),
        other => Err(Error::RasterType {
            path: path.into(),
            expected: "a 1-band f32 image".into(),
            found: other.describe(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn sample_c2() -> C2Raster {
        let mut c2 = C2Raster::zeros(2, 3);
        for i in 0..6 {
            c2.c11[i] = 1.0 + i as f64;
            c2.c22[i] = 0.5 * i as f64;
            c2.c12[i] = Complex64::new(0.25 * i as f64, -0.125 * i as f64);
        }
        c2
    }

    #[test]
    fn c2_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c2.psr");
        let c2 = sample_c2();
        write_c2(&path, &c2).unwrap();
        assert_eq!(read_c2(&path).unwrap(), c2);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.psr");
        let b = dir.path().join("b.psr");
        let c2 = sample_c2();
        write_c2(&a, &c2).unwrap();
        write_c2(&b, &read_c2(&a).unwrap()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn single_pixel_file_has_header_plus_four_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.psr");
        let mut c2 = C2Raster::zeros(1, 1);
        c2.c11[0] = 1.0;
        c2.c22[0] = 1.0;
        write_c2(&path, &c2).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 8);
        assert_eq!(read_c2(&path).unwrap(), c2);
    }

    #[test]
    fn bad_magic_is_reported_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.psr");
        let mut c2 = C2Raster::zeros(1, 1);
        c2.c11[0] = 1.0;
        write_c2(&path, &c2).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        std::fs::write(&path, bytes).unwrap();
        let err = read_c2(&path).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }), "{err}");
        assert!(err.to_string().contains("byte offset 0"), "{err}");
    }

    #[test]
    fn truncation_reports_expected_and_actual_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.psr");
        write_c2(&path, &sample_c2()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..HEADER_LEN + 5]).unwrap();
        match read_c2(&path).unwrap_err() {
            Error::Truncated {
                expected, actual, ..
            } => {
                assert_eq!(expected, 2 * 3 * 4 * 8);
                assert_eq!(actual, 5);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn negative_diagonal_refused_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neg.psr");
        let mut c2 = sample_c2();
        c2.c11[3] = -0.5;
        assert!(write_c2(&path, &c2).is_err());
        assert!(!path.exists(), "refused write must not create the file");
    }

    #[test]
    fn mask_read_as_c2_is_a_type_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.psr");
        write_mask(&path, &MaskRaster::zeros(4, 4)).unwrap();
        let err = read_c2(&path).unwrap_err();
        assert!(matches!(err, Error::RasterType { .. }), "{err}");
        assert!(err.to_string().contains("1-band u8"), "{err}");
    }

    #[test]
    fn complex_and_f32_rasters_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cplx.psr");
        let r = Raster {
            height: 2,
            width: 2,
            bands: 1,
            data: vec![
                Complex64::new(1.0, -2.0),
                Complex64::new(0.0, 0.5),
                Complex64::new(-3.25, 4.75),
                Complex64::new(f64::MIN_POSITIVE, 0.0),
            ],
        };
        write_raster(&path, &r).unwrap();
        match read_any(&path).unwrap() {
            AnyRaster::C128(back) => assert_eq!(back, r),
            other => panic!("wrong dtype {:?}", other.dtype()),
        }

        let path32 = dir.path().join("plane.psr");
        write_f32_plane(&path32, 2, 2, &[0.0, 0.25, -1.5, 3.0]).unwrap();
        assert_eq!(read_f32_plane(&path32).unwrap().data, vec![0.0, 0.25, -1.5, 3.0]);
    }

    #[test]
    fn header_reports_shape_without_decoding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.psr");
        write_c2(&path, &sample_c2()).unwrap();
        let h = read_header(&path).unwrap();
        assert_eq!((h.height, h.width, h.bands), (2, 3, 4));
        assert_eq!(h.dtype, DType::F64);
        assert_eq!(h.payload_bytes(), 2 * 3 * 4 * 8);
    }
}
