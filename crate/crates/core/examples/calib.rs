//! Scratch calibration for the training-based acceptance criteria.

use std::time::Instant;

use polsar_despeckle::dataset::{compute_norm_stats, sample_patches, SampleConfig};
use polsar_despeckle::dncnn::{despeckle_raster, train, InferParams, NetConfig, TrainConfig};
use polsar_despeckle::metrics::{enl, RegionOfInterest};
use polsar_despeckle::polsar::{temporal_average, transform_raster};
use polsar_despeckle::sim::{simulate_scene, simulate_stack, ChangeScript, CovSpec, Rect, Region, SceneSpec};
use polsar_despeckle::util::db;
use polsar_despeckle::BandStack;

fn scaled(base: CovSpec, gain: f64) -> CovSpec {
    CovSpec {
        c11: base.c11 * gain,
        c22: base.c22 * gain,
        c12_re: base.c12_re * gain,
        c12_im: base.c12_im * gain,
    }
}

fn rect_mean(plane: &[f64], width: usize, rect: (usize, usize, usize, usize)) -> f64 {
    let (r0, c0, h, w) = rect;
    let mut sum = 0.0;
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            sum += plane[r * width + c];
        }
    }
    sum / (h * w) as f64
}

/// Intensity-style ENL (mean^2 / variance) of one raster band.
fn band_enl(plane: &[f64]) -> f64 {
    let n = plane.len() as f64;
    let mean = plane.iter().sum::<f64>() / n;
    let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    mean * mean / var
}

#[allow(clippy::too_many_arguments)]
fn run(
    tag: &str,
    covs: &[CovSpec],
    patch: usize,
    count: usize,
    epochs: usize,
    batch: usize,
    lr0: f64,
    decay: usize,
    factor: f64,
    stack_epochs: usize,
) {
    let t0 = Instant::now();
    let background = CovSpec { c11: 1.0, c22: 0.5, c12_re: 0.25, c12_im: 0.1 };
    let mut regions = Vec::new();
    let slots = [
        (10usize, 14usize, 52usize, 60usize),
        (20, 120, 56, 52),
        (100, 24, 60, 64),
        (108, 116, 56, 60),
    ];
    for (i, &cov) in covs.iter().enumerate() {
        let (r, c, h, w) = slots[i % slots.len()];
        regions.push(Region { rect: Rect { row: r, col: c, height: h, width: w }, cov });
    }
    let scene = SceneSpec { height: 192, width: 192, background, regions, point_targets: vec![] };
    let dates: Vec<String> = (0..stack_epochs).map(|i| format!("2022-01-{:02}", i + 1)).collect();
    let (stack, _gt) = simulate_stack(&scene, &ChangeScript::still(stack_epochs), dates, 0x501, 1).unwrap();
    let reference = temporal_average(&stack).unwrap();
    let bands: Vec<BandStack> = stack.epochs.iter().map(|e| transform_raster(e).unwrap()).collect();
    let norm = compute_norm_stats(&bands, 0.0, 99.9).unwrap();
    let ds = sample_patches(&stack, &reference, None, &norm,
        &SampleConfig { count, patch, seed: 0x502, ..SampleConfig::default() }).unwrap();

    let net_cfg = NetConfig { depth: 6, width: 16, ..NetConfig::default() };
    let train_cfg = TrainConfig {
        epochs,
        batch_size: batch,
        lr0,
        lr_decay_every: decay,
        lr_decay_factor: factor,
        seed: 0x503,
        ..TrainConfig::default()
    };
    let outcome = train(&ds, &net_cfg, &train_cfg).unwrap();
    polsar_despeckle::dncnn::write_model("/tmp/calib_model.psm", &outcome.model).unwrap();
    let baseline = outcome.val_baseline.unwrap();
    let best = outcome.log.iter().filter_map(|l| l.val_loss).fold(f64::INFINITY, f64::min);

    let flat = SceneSpec { height: 128, width: 128, background, regions: vec![], point_targets: vec![] };
    let single = simulate_scene(&flat, 0x504, 1).unwrap();
    let (filtered, report) = despeckle_raster(&single, &outcome.model, &InferParams::default()).unwrap();
    let full = RegionOfInterest::full(128, 128, "scene");
    let e0 = enl(&single, &full).unwrap().value;
    let e1 = enl(&filtered, &full).unwrap().value;
    for margin in [4usize, 8, 12, 16, 24] {
        let roi = RegionOfInterest {
            row0: margin,
            col0: margin,
            height: 128 - 2 * margin,
            width: 128 - 2 * margin,
            label: "interior".into(),
        };
        let ei = enl(&filtered, &roi).unwrap().value;
        print!("m{margin}: {ei:.1}  ");
    }
    println!();
    println!(
        "clips: in {} out {} inv {} psd {}",
        report.input_clipped, report.output_clipped, report.inverse_clamped, report.psd_adjusted
    );
    let n = filtered.len() as f64;
    let re_mean = filtered.c12.iter().map(|z| z.re).sum::<f64>() / n;
    let im_mean = filtered.c12.iter().map(|z| z.im).sum::<f64>() / n;
    let re_std =
        (filtered.c12.iter().map(|z| (z.re - re_mean) * (z.re - re_mean)).sum::<f64>() / n).sqrt();
    let im_std =
        (filtered.c12.iter().map(|z| (z.im - im_mean) * (z.im - im_mean)).sum::<f64>() / n).sqrt();
    let ci: Vec<f64> =
        filtered.c11.iter().zip(&filtered.c22).zip(&filtered.c12).map(|((a, b), z)| a + b + 2.0 * z.re).collect();
    let cq: Vec<f64> =
        filtered.c11.iter().zip(&filtered.c22).zip(&filtered.c12).map(|((a, b), z)| a + b + 2.0 * z.im).collect();
    let interior = (10usize, 10usize, 108usize, 108usize);
    let b11 = db(rect_mean(&filtered.c11, 128, interior) / background.c11).abs();
    let b22 = db(rect_mean(&filtered.c22, 128, interior) / background.c22).abs();
    println!(
        "{tag}: val {:.3}, ENL {e0:.2} -> {e1:.2} [c11 {:.1}, c22 {:.1}, ci {:.1}, cq {:.1}], \
         c12 ({re_mean:.3},{im_mean:.3})+-({re_std:.3},{im_std:.3}) vs ({:.2},{:.2}), \
         bias {b11:.3}/{b22:.3} dB, {:.0} s",
        best / baseline,
        band_enl(&filtered.c11),
        band_enl(&filtered.c22),
        band_enl(&ci),
        band_enl(&cq),
        background.c12_re,
        background.c12_im,
        t0.elapsed().as_secs_f64()
    );
}

fn main() {
    let background = CovSpec { c11: 1.0, c22: 0.5, c12_re: 0.25, c12_im: 0.1 };
    // Regions that share the background's polarimetric structure (pure gain).
    let prop: Vec<CovSpec> = [0.6, 1.6, 2.2].iter().map(|&g| scaled(background, g)).collect();
    // Full-size dress rehearsal: small batches maximize optimizer steps per
    // wall-second at this patch size, with a long hot phase before decay.
    run("final", &prop, 64, 2000, 15, 4, 1e-2, 6, 3.162, 24);
}
