//! Full-raster despeckling: transform, normalize, run the network over
//! overlapping tiles, feather-blend, and invert back to covariance form.
//!
//! Tile blending uses a separable weight profile along each axis. Within
//! `margin` pixels of an interior tile edge the weight is 0 — those pixels'
//! receptive fields hang over the tile's zero padding, so their values are
//! tile-size artifacts — then it ramps linearly to 1 across the rest of the
//! overlap. The ramps of two neighboring tiles are complementary, so the
//! per-pixel weight sum is always ≥ 1 and the blend is a true weighted
//! average. Edges that coincide with the raster border keep weight 1: the
//! zero padding there is a property of the image, not of the tiling.

use ndarray::Array4;

use crate::error::{Error, Result};
use crate::polsar::{project_psd_raster, transform_raster, untransform_raster};
use crate::raster::{BandStack, C2Raster};

use super::network::NetworkModel;

#[derive(Debug, Clone, Copy)]
pub struct InferParams {
    pub tile: usize,
    pub overlap: usize,
    /// Project each output pixel back onto the positive-semidefinite cone.
    pub project_psd: bool,
}

impl Default for InferParams {
    fn default() -> Self {
        InferParams {
            tile: 256,
            overlap: 16,
            project_psd: true,
        }
    }
}

/// Bookkeeping from one despeckling run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InferReport {
    pub tiles: usize,
    /// Input samples outside the normalization bounds (clipped going in).
    pub input_clipped: usize,
    /// Network outputs outside [0, 1] (clipped before denormalization).
    pub output_clipped: usize,
    /// Negative intensities clamped by the inverse transform.
    pub inverse_clamped: usize,
    /// Pixels adjusted by the PSD projection.
    pub psd_adjusted: usize,
}

/// Tile start offsets along one axis: a regular grid of `tile - overlap`
/// steps, with the final tile flush against the far border.
fn tile_starts(len: usize, tile: usize, step: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..)
        .map(|i| i * step)
        .take_while(|&s| s + tile < len)
        .collect();
    v.push(len - tile);
    v
}

/// Weight profile for one tile along one axis.
fn axis_weights(
    tile_len: usize,
    lo_is_border: bool,
    hi_is_border: bool,
    margin: usize,
    ramp: usize,
) -> Vec<f64> {
    let side = |d: usize| -> f64 {
        (((d as i64 - margin as i64 + 1) as f64) / (ramp as f64 + 1.0)).clamp(0.0, 1.0)
    };
    (0..tile_len)
        .map(|i| {
            let lo = if lo_is_border { 1.0 } else { side(i) };
            let hi = if hi_is_border { 1.0 } else { side(tile_len - 1 - i) };
            lo * hi
        })
        .collect()
}

pub fn despeckle_raster(
    c2: &C2Raster,
    model: &NetworkModel,
    params: &InferParams,
) -> Result<(C2Raster, InferReport)> {
    let cfg = &model.net.config;
    let rf = cfg.receptive_field();
    if params.tile < rf {
        return Err(Error::Config(format!(
            "tile {} is smaller than the network receptive field {rf}",
            params.tile
        )));
    }
    if params.tile < 2 * params.overlap {
        return Err(Error::Config(format!(
            "tile {} must be at least twice the overlap {}",
            params.tile, params.overlap
        )));
    }
    let (height, width) = (c2.height, c2.width);
    if height < cfg.kernel || width < cfg.kernel {
        return Err(Error::Geometry(format!(
            "raster {height}x{width} is smaller than the {0}x{0} kernel",
            cfg.kernel
        )));
    }

    let mut report = InferReport::default();
    let bands = transform_raster(c2)?;
    let hw = height * width;

    // Normalize into f32 planes, counting samples clipped at either bound.
    let norm = &model.norm;
    norm.validate()?;
    let mut planes = vec![0.0f32; 4 * hw];
    for b in 0..4 {
        let lo = norm.x_min[b];
        let hi = norm.x_max[b];
        for (o, &v) in planes[b * hw..(b + 1) * hw].iter_mut().zip(&bands.bands[b]) {
            if v < lo || v > hi {
                report.input_clipped += 1;
            }
            *o = (((v - lo) / (hi - lo)).clamp(0.0, 1.0)) as f32;
        }
    }

    let margin = (rf / 2).min(params.overlap.saturating_sub(1) / 2);
    let ramp = params.overlap.saturating_sub(2 * margin);
    let step = params.tile - params.overlap;
    let row_starts = tile_starts(height, params.tile, step);
    let col_starts = tile_starts(width, params.tile, step);

    let mut acc = vec![0.0f64; 4 * hw];
    let mut wsum = vec![0.0f64; hw];
    for &r0 in &row_starts {
        let th = params.tile.min(height);
        for &c0 in &col_starts {
            let tw = params.tile.min(width);
            let mut input = Array4::<f32>::zeros((1, 4, th, tw));
            {
                let slice = input.as_slice_mut().unwrap();
                for b in 0..4 {
                    for i in 0..th {
                        let src = (b * height + r0 + i) * width + c0;
                        let dst = (b * th + i) * tw;
                        slice[dst..dst + tw].copy_from_slice(&planes[src..src + tw]);
                    }
                }
            }
            let residual = model.net.forward_infer(&input)?;
            let wr = axis_weights(th, r0 == 0, r0 + th == height, margin, ramp);
            let wc = axis_weights(tw, c0 == 0, c0 + tw == width, margin, ramp);
            let in_slice = input.as_slice().unwrap();
            let res_slice = residual.as_slice().unwrap();
            for b in 0..4 {
                for i in 0..th {
                    let t_base = (b * th + i) * tw;
                    let a_base = (b * height + r0 + i) * width + c0;
                    for j in 0..tw {
                        let value = f64::from(in_slice[t_base + j] - res_slice[t_base + j]);
                        acc[a_base + j] += wr[i] * wc[j] * value;
                    }
                }
            }
            for i in 0..th {
                let w_base = (r0 + i) * width + c0;
                for j in 0..tw {
                    wsum[w_base + j] += wr[i] * wc[j];
                }
            }
            report.tiles += 1;
        }
    }

    // Blend, clip to [0, 1], and denormalize.
    let mut filtered = BandStack::zeros(height, width);
    for b in 0..4 {
        let lo = norm.x_min[b];
        let hi = norm.x_max[b];
        for px in 0..hw {
            let v = acc[b * hw + px] / wsum[px];
            if !(0.0..=1.0).contains(&v) {
                report.output_clipped += 1;
            }
            filtered.bands[b][px] = v.clamp(0.0, 1.0) * (hi - lo) + lo;
        }
    }

    let (mut out, clamped) = untransform_raster(&filtered);
    report.inverse_clamped = clamped;
    if params.project_psd {
        report.psd_adjusted = project_psd_raster(&mut out);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NormStats;
    use crate::dncnn::network::Network;
    use crate::dncnn::NetConfig;
    use crate::sim::{self, CovSpec, SceneSpec};

    fn flat_scene(height: usize, width: usize, seed: u64) -> C2Raster {
        let spec = SceneSpec {
            height,
            width,
            background: CovSpec {
                c11: 1.0,
                c22: 0.5,
                c12_re: 0.2,
                c12_im: 0.1,
            },
            regions: Vec::new(),
            point_targets: Vec::new(),
        };
        sim::simulate_scene(&spec, seed, 1).unwrap()
    }

    fn wide_norm() -> NormStats {
        NormStats {
            x_min: [0.0; 4],
            x_max: [50.0; 4],
        }
    }

    #[test]
    fn tile_starts_cover_with_flush_final_tile() {
        assert_eq!(tile_starts(100, 64, 48), vec![0, 36]);
        assert_eq!(tile_starts(64, 64, 48), vec![0]);
        assert_eq!(tile_starts(40, 64, 48), vec![0]);
        assert_eq!(tile_starts(200, 64, 48), vec![0, 48, 96, 136]);
    }

    #[test]
    fn neighboring_ramps_are_complementary() {
        // Two interior edges at nominal overlap: weights sum to exactly 1.
        let overlap = 16;
        let margin = 6;
        let ramp = overlap - 2 * margin;
        let a = axis_weights(64, true, false, margin, ramp);
        let b = axis_weights(64, false, true, margin, ramp);
        for d in 0..overlap {
            let sum = a[64 - overlap + d] + b[d];
            assert!((sum - 1.0).abs() < 1e-12, "offset {d}: {sum}");
        }
    }

    #[test]
    fn zero_model_is_an_identity_pipeline() {
        let cfg = NetConfig {
            depth: 3,
            width: 2,
            ..Default::default()
        };
        let model = NetworkModel {
            net: Network::<f32>::zeros(&cfg).unwrap(),
            norm: wide_norm(),
        };
        let c2 = flat_scene(48, 40, 5);
        let params = InferParams {
            tile: 32,
            overlap: 8,
            project_psd: true,
        };
        let (out, report) = despeckle_raster(&c2, &model, &params).unwrap();
        assert_eq!(report.input_clipped, 0, "scene exceeds the norm bounds");
        let mut max_rel = 0.0f64;
        for i in 0..c2.len() {
            let scale = c2.c11[i].abs().max(1e-9);
            max_rel = max_rel.max((out.c11[i] - c2.c11[i]).abs() / scale);
            let scale = c2.c22[i].abs().max(1e-9);
            max_rel = max_rel.max((out.c22[i] - c2.c22[i]).abs() / scale);
            let scale = c2.c12[i].norm().max(1e-9);
            max_rel = max_rel.max((out.c12[i] - c2.c12[i]).norm() / scale);
        }
        // f32 normalization round trip bounds the deviation.
        assert!(max_rel < 1e-5, "identity deviation {max_rel}");
    }

    #[test]
    fn tiling_choice_does_not_change_the_interior() {
        let cfg = NetConfig {
            depth: 4,
            width: 6,
            ..Default::default()
        };
        let model = NetworkModel {
            net: Network::<f32>::init(&cfg, 77).unwrap(),
            norm: wide_norm(),
        };
        let c2 = flat_scene(160, 140, 6);
        let run = |tile: usize| {
            let params = InferParams {
                tile,
                overlap: 16,
                project_psd: false,
            };
            despeckle_raster(&c2, &model, &params).unwrap().0
        };
        let a = run(64);
        let b = run(128);
        let margin = 20;
        let mut max_rel = 0.0f64;
        for r in margin..160 - margin {
            for c in margin..140 - margin {
                let i = r * 140 + c;
                let scale = a.c11[i].abs().max(1e-9);
                max_rel = max_rel.max((a.c11[i] - b.c11[i]).abs() / scale);
                let scale = a.c22[i].abs().max(1e-9);
                max_rel = max_rel.max((a.c22[i] - b.c22[i]).abs() / scale);
            }
        }
        assert!(max_rel < 1e-3, "tiling deviation {max_rel}");
    }

    #[test]
    fn undersized_tiles_are_rejected() {
        let model = NetworkModel {
            net: Network::<f32>::zeros(&NetConfig::default()).unwrap(),
            norm: wide_norm(),
        };
        let c2 = flat_scene(64, 64, 7);
        // Default depth 19 has a 39-pixel receptive field.
        let err = despeckle_raster(
            &c2,
            &model,
            &InferParams {
                tile: 32,
                overlap: 8,
                project_psd: true,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("receptive field"), "{err}");
        let err = despeckle_raster(
            &c2,
            &model,
            &InferParams {
                tile: 48,
                overlap: 30,
                project_psd: true,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("twice the overlap"), "{err}");
    }
}
