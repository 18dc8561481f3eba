//! False-colour PNG quicklooks for covariance rasters.
//!
//! Channels: R = c11 (VV), G = c22 (VH), B = c11/c22. Each channel is clipped
//! at its 2nd-98th percentile and scaled linearly to 0-255. This stretch only
//! affects visualization, never the numeric pipeline.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::C2Raster;
use crate::error::{Error, Result};
use crate::util::percentile;

/// Percentile-stretches one channel to 8 bit.
///
/// Degenerate channels (no spread between the clip points) render mid-gray,
/// except all-zero channels which stay black — a constant image should look
/// uniform, while a missing channel (e.g. c22 = 0 everywhere) stays dark.
fn stretch(values: &[f64]) -> Vec<u8> {
    let lo = percentile(values, 2.0);
    let hi = percentile(values, 98.0);
    match (lo, hi) {
        (Some(lo), Some(hi)) if hi > lo => {
            let scale = 255.0 / (hi - lo);
            values
                .iter()
                .map(|&v| {
                    if v.is_nan() {
                        0
                    } else {
                        (((v - lo) * scale).clamp(0.0, 255.0)).round() as u8
                    }
                })
                .collect()
        }
        (Some(lo), _) if lo > 0.0 => vec![128; values.len()],
        _ => vec![0; values.len()],
    }
}

/// Writes an RGB false-colour composite of `c2` as PNG.
pub fn export_quicklook(c2: &C2Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ratio: Vec<f64> = c2
        .c11
        .iter()
        .zip(&c2.c22)
        .map(|(&a, &b)| if b > 0.0 { a / b } else { 0.0 })
        .collect();
    let r = stretch(&c2.c11);
    let g = stretch(&c2.c22);
    let b = stretch(&ratio);

    let mut rgb = Vec::with_capacity(3 * c2.len());
    for i in 0..c2.len() {
        rgb.extend_from_slice(&[r[i], g[i], b[i]]);
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), c2.width as u32, c2.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let into_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(into_err)?;
    writer.write_image_data(&rgb).map_err(into_err)?;
    writer.finish().map_err(into_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_rgb(path: &Path) -> (u32, u32, Vec<u8>) {
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn constant_raster_renders_uniform_gray() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("const.png");
        let mut c2 = C2Raster::zeros(4, 5);
        c2.c11.fill(1.0);
        c2.c22.fill(1.0);
        export_quicklook(&c2, &path).unwrap();
        let (w, h, rgb) = read_rgb(&path);
        assert_eq!((w, h), (5, 4));
        assert!(rgb.iter().all(|&v| v == rgb[0]), "all channels equal");
    }

    #[test]
    fn zero_c22_gives_black_blue_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("novh.png");
        let mut c2 = C2Raster::zeros(3, 3);
        for (i, v) in c2.c11.iter_mut().enumerate() {
            *v = 1.0 + i as f64;
        }
        export_quicklook(&c2, &path).unwrap();
        let (_, _, rgb) = read_rgb(&path);
        assert!(rgb.chunks(3).all(|px| px[1] == 0 && px[2] == 0));
        assert!(rgb.chunks(3).any(|px| px[0] > 0));
    }

    #[test]
    fn checkerboard_c11_survives_the_stretch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("check.png");
        let mut c2 = C2Raster::zeros(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                let i = c2.idx(r, c);
                c2.c11[i] = if (r + c) % 2 == 0 { 1.0 } else { 2.0 };
                c2.c22[i] = 1.0;
            }
        }
        export_quicklook(&c2, &path).unwrap();
        let (_, _, rgb) = read_rgb(&path);
        // 2-98 percentile of a {1,2} checkerboard clips at 1 and 2, so the red
        // channel must be exactly the 0/255 checkerboard.
        for r in 0..8 {
            for c in 0..8 {
                let red = rgb[3 * (r * 8 + c)];
                assert_eq!(red, if (r + c) % 2 == 0 { 0 } else { 255 });
            }
        }
    }
}
