//! One function per CLI subcommand. Each loads its manifest, runs the
//! underlying module, writes the declared outputs plus a `.run.json`
//! reproducibility record, and returns that record for logging.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::change::{change_mask, OmnibusParams};
use crate::dataset::{
    compute_norm_stats, read_dataset, sample_patches, write_dataset, SampleConfig,
};
use crate::dncnn::{despeckle_raster, read_model, train, write_model, InferParams};
use crate::error::{Error, Result};
use crate::metrics::{enl, epd_roa, ssim, Direction, SsimParams};
use crate::polsar::{temporal_average, transform_raster, Cov2};
use crate::raster::io::{read_c2, read_mask, write_c2, write_f32_plane, write_mask};
use crate::raster::quicklook::export_quicklook;
use crate::raster::{BandStack, C2Raster};
use crate::sim::{simulate_stack, ChangeScript};

use super::manifests::{
    ChangemaskManifest, DatasetManifest, DespeckleManifest, EvaluateManifest, SimulateManifest,
    StackManifest, TrainManifest,
};
use super::{ensure_parent, load_manifest, load_stack, RunRecord};

fn cov_field_to_raster(field: &[Cov2], height: usize, width: usize) -> C2Raster {
    let mut c2 = C2Raster::zeros(height, width);
    for (i, c) in field.iter().enumerate() {
        c2.c11[i] = c.c11;
        c2.c22[i] = c.c22;
        c2.c12[i] = c.c12;
    }
    c2
}

/// Simulates a speckled stack: per-epoch C2 rasters, optional noise-free
/// truth rasters, the ground-truth change mask, and a `stack.json` index
/// for the downstream stages.
pub fn cmd_simulate(manifest: &Path, threads: usize) -> Result<RunRecord> {
    let (m, digest): (SimulateManifest, _) = load_manifest(manifest)?;
    let script = m.script.clone().unwrap_or_else(|| ChangeScript::still(1));
    let start = NaiveDate::parse_from_str(&m.start_date, "%Y-%m-%d")
        .map_err(|e| Error::Config(format!("start_date `{}`: {e}", m.start_date)))?;
    let mut dates = Vec::with_capacity(script.epochs);
    for i in 0..script.epochs {
        let date = start
            .checked_add_days(chrono::Days::new(i as u64 * m.interval_days as u64))
            .ok_or_else(|| Error::Config(format!("date overflow at epoch {i}")))?;
        dates.push(date.to_string());
    }

    let (stack, gt) = simulate_stack(&m.scene, &script, dates.clone(), m.seed, threads)?;
    let out_dir = PathBuf::from(&m.output_dir);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut rec = RunRecord::new("simulate", digest, Some(m.seed), threads);
    let mut epoch_names = Vec::with_capacity(stack.len());
    for (i, epoch) in stack.epochs.iter().enumerate() {
        let name = format!("epoch_{i:02}.c2");
        let path = out_dir.join(&name);
        write_c2(&path, epoch)?;
        rec.outputs.push(path.display().to_string());
        epoch_names.push(name);
    }
    if m.write_truth {
        for e in 0..script.epochs {
            let field = m.scene.truth_for_epoch(&script, e)?;
            let path = out_dir.join(format!("truth_{e:02}.c2"));
            write_c2(&path, &cov_field_to_raster(&field, m.scene.height, m.scene.width))?;
            rec.outputs.push(path.display().to_string());
        }
    }
    let mask_path = out_dir.join("change_gt.mask");
    write_mask(&mask_path, &gt)?;
    rec.outputs.push(mask_path.display().to_string());

    let index = StackManifest {
        epochs: epoch_names,
        dates,
    };
    let index_path = out_dir.join("stack.json");
    let body = serde_json::to_string_pretty(&index).expect("index serialization cannot fail");
    fs::write(&index_path, body + "\n").map_err(|e| Error::io(&index_path, e))?;
    rec.outputs.push(index_path.display().to_string());

    log::info!(
        "simulated {} epoch(s) of {}x{} into {} (seed {})",
        stack.len(),
        m.scene.height,
        m.scene.width,
        out_dir.display(),
        m.seed
    );
    rec.write_next_to(&index_path)?;
    Ok(rec)
}

/// Runs the omnibus test over a stack and writes the change mask (plus an
/// optional probability raster).
pub fn cmd_changemask(manifest: &Path, threads: usize) -> Result<RunRecord> {
    let (m, digest): (ChangemaskManifest, _) = load_manifest(manifest)?;
    let stack = load_stack(Path::new(&m.stack))?;
    let n = m.window_az as f64 * m.window_rg as f64 * m.looks_factor;
    let params = OmnibusParams::new(stack.len(), n, m.significance)?;
    let mask = change_mask(&stack, m.window_az, m.window_rg, &params, threads)?;

    let mask_path = PathBuf::from(&m.mask_output);
    ensure_parent(&mask_path)?;
    write_mask(&mask_path, &mask.to_mask_raster())?;
    let mut rec = RunRecord::new("changemask", digest, None, threads);
    rec.outputs.push(m.mask_output.clone());
    if let Some(prob_out) = &m.probability_output {
        let path = PathBuf::from(prob_out);
        ensure_parent(&path)?;
        write_f32_plane(&path, mask.height, mask.width, &mask.prob_f32())?;
        rec.outputs.push(prob_out.clone());
    }
    log::info!(
        "change mask over {} epochs: {:.2}% changed, {} singular pixel(s)",
        stack.len(),
        100.0 * mask.changed_ratio(),
        mask.singular
    );
    rec.write_next_to(&mask_path)?;
    Ok(rec)
}

/// Samples a noisy/clean patch dataset from a stack, excluding changed areas.
pub fn cmd_dataset(manifest: &Path, threads: usize) -> Result<RunRecord> {
    let (m, digest): (DatasetManifest, _) = load_manifest(manifest)?;
    let stack = load_stack(Path::new(&m.stack))?;
    let mask = m.mask.as_ref().map(read_mask).transpose()?;
    let reference = temporal_average(&stack)?;
    let bands: Vec<BandStack> = stack
        .epochs
        .iter()
        .map(transform_raster)
        .collect::<Result<_>>()?;
    let norm = compute_norm_stats(&bands, m.lo_percentile, m.hi_percentile)?;
    drop(bands);

    let cfg = SampleConfig {
        count: m.count,
        patch: m.patch,
        max_change_ratio: m.max_change_ratio,
        seed: m.seed,
        stack_id: m.stack_id,
    };
    let mut ds = sample_patches(&stack, &reference, mask.as_ref(), &norm, &cfg)?;
    ds.source_digest = digest.clone();

    let out = PathBuf::from(&m.output);
    ensure_parent(&out)?;
    write_dataset(&out, &ds)?;
    let mut rec = RunRecord::new("dataset", digest, Some(m.seed), threads);
    rec.outputs.push(m.output.clone());
    rec.write_next_to(&out)?;
    Ok(rec)
}

/// Trains the residual denoiser and writes the checkpoint plus a CSV log.
pub fn cmd_train(manifest: &Path, threads: usize) -> Result<RunRecord> {
    let (m, digest): (TrainManifest, _) = load_manifest(manifest)?;
    let ds = read_dataset(&m.dataset)?;
    let mut cfg = m.train.clone();
    cfg.seed = m.seed;
    let outcome = train(&ds, &m.net, &cfg)?;

    let ckpt = PathBuf::from(&m.checkpoint_output);
    ensure_parent(&ckpt)?;
    write_model(&ckpt, &outcome.model)?;

    let mut csv = String::from("epoch,lr,train_loss,val_loss\n");
    for e in &outcome.log {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{val}", e.epoch, e.lr, e.train_loss).expect("string write");
    }
    let log_path = PathBuf::from(&m.log_output);
    ensure_parent(&log_path)?;
    fs::write(&log_path, csv).map_err(|e| Error::io(&log_path, e))?;

    log::info!(
        "kept the model of epoch {} (of {} run)",
        outcome.best_epoch,
        outcome.log.len()
    );
    let mut rec = RunRecord::new("train", digest, Some(m.seed), threads);
    rec.outputs.push(m.checkpoint_output.clone());
    rec.outputs.push(m.log_output.clone());
    rec.write_next_to(&ckpt)?;
    Ok(rec)
}

/// Despeckles one C2 raster with a trained checkpoint.
pub fn cmd_despeckle(manifest: &Path, threads: usize) -> Result<RunRecord> {
    let (m, digest): (DespeckleManifest, _) = load_manifest(manifest)?;
    let model = read_model(&m.checkpoint)?;
    if let Some(expected) = &m.norm_stats {
        if *expected != model.norm {
            log::warn!(
                "manifest normalization bounds {expected:?} differ from the checkpoint's \
                 {:?}; the checkpoint wins (the network was trained with them)",
                model.norm
            );
        }
    }
    let c2 = read_c2(&m.input)?;
    let params = InferParams {
        tile: m.tile,
        overlap: m.overlap,
        project_psd: m.project_psd,
    };
    let (filtered, report) = despeckle_raster(&c2, &model, &params)?;

    let out = PathBuf::from(&m.output);
    ensure_parent(&out)?;
    write_c2(&out, &filtered)?;
    let mut rec = RunRecord::new("despeckle", digest, None, threads);
    rec.outputs.push(m.output.clone());
    if let Some(ql) = &m.quicklook {
        let path = PathBuf::from(ql);
        ensure_parent(&path)?;
        export_quicklook(&filtered, &path)?;
        rec.outputs.push(ql.clone());
    }
    log::info!(
        "despeckled {}x{} in {} tile(s): {} input sample(s) clipped, {} output(s) clipped, \
         {} intensity clamp(s), {} pixel(s) PSD-adjusted",
        c2.height,
        c2.width,
        report.tiles,
        report.input_clipped,
        report.output_clipped,
        report.inverse_clamped,
        report.psd_adjusted
    );
    rec.write_next_to(&out)?;
    Ok(rec)
}

/// Dynamic range of a span image inside a region (max - min).
fn span_range(span: &[f64], width: usize, roi: &crate::metrics::RegionOfInterest) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in roi.row0..roi.row0 + roi.height {
        for c in roi.col0..roi.col0 + roi.width {
            let v = span[r * width + c];
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    hi - lo
}

/// Computes ENL, EPD-ROA and (given a reference) SSIM over each region and
/// writes one CSV row per region.
pub fn cmd_evaluate(manifest: &Path, threads: usize) -> Result<RunRecord> {
    let (m, digest): (EvaluateManifest, _) = load_manifest(manifest)?;
    if m.rois.is_empty() {
        return Err(Error::Config("evaluate needs at least one ROI".into()));
    }
    let original = read_c2(&m.original)?;
    let filtered = read_c2(&m.filtered)?;
    let reference = m.reference.as_ref().map(read_c2).transpose()?;
    if let Some(r) = &reference {
        if !r.same_geometry(&filtered) {
            return Err(Error::Geometry(format!(
                "reference is {}x{}, filtered is {}x{}",
                r.height, r.width, filtered.height, filtered.width
            )));
        }
    }
    let filtered_span = filtered.span();
    let reference_span = reference.as_ref().map(|r| r.span());

    let mut csv = String::from(
        "label,enl_original,enl_filtered,epd_horizontal,epd_vertical,epd_combined,\
         epd_skipped,ssim\n",
    );
    for roi in &m.rois {
        if roi.label.contains([',', '"', '\n']) {
            return Err(Error::Roi {
                label: roi.label.clone(),
                detail: "label must not contain commas, quotes or newlines (CSV output)".into(),
            });
        }
        roi.validate(filtered.height, filtered.width)?;
        let enl_orig = enl(&original, roi)?;
        let enl_filt = enl(&filtered, roi)?;
        let h = epd_roa(&original, &filtered, roi, Direction::Horizontal)?;
        let v = epd_roa(&original, &filtered, roi, Direction::Vertical)?;
        let ssim_cell = match &reference_span {
            Some(ref_span) => {
                let range = m.ssim_dynamic_range.unwrap_or_else(|| {
                    let r = span_range(ref_span, filtered.width, roi);
                    if r > 0.0 {
                        r
                    } else {
                        log::warn!(
                            "reference span is constant over ROI `{}`; using dynamic range 1",
                            roi.label
                        );
                        1.0
                    }
                });
                let params = SsimParams {
                    window: m.ssim_window,
                    dynamic_range: range,
                    convention: m.ssim_convention,
                };
                ssim(
                    &filtered_span,
                    ref_span,
                    filtered.height,
                    filtered.width,
                    roi,
                    &params,
                )?
                .to_string()
            }
            None => String::new(),
        };
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{ssim_cell}",
            roi.label,
            enl_orig.value,
            enl_filt.value,
            h.value,
            v.value,
            0.5 * (h.value + v.value),
            h.skipped + v.skipped,
        )
        .expect("string write");
    }

    let out = PathBuf::from(&m.output);
    ensure_parent(&out)?;
    fs::write(&out, csv).map_err(|e| Error::io(&out, e))?;
    log::info!("evaluated {} ROI(s) into {}", m.rois.len(), out.display());
    let mut rec = RunRecord::new("evaluate", digest, None, threads);
    rec.outputs.push(m.output.clone());
    rec.write_next_to(&out)?;
    Ok(rec)
}

/// Renders an 8-bit PNG quicklook of a C2 raster. No manifest: the two
/// paths are the whole interface, and no run record is written.
pub fn cmd_quicklook(input: &Path, output: &Path) -> Result<()> {
    let c2 = read_c2(input)?;
    ensure_parent(output)?;
    export_quicklook(&c2, output)?;
    log::info!("wrote quicklook {}", output.display());
    Ok(())
}
