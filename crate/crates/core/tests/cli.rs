//! Behavior of the CLI binary: manifest validation messages, error paths,
//! the checkpoint-precedence rule, and byte-identical re-runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polsar-despeckle"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary should run")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_manifest(path: &Path, value: serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
}

/// Simulates a small three-epoch stack and returns the stack index path.
fn simulate_small(root: &Path, seed: u64) -> PathBuf {
    let manifest = root.join("simulate.json");
    write_manifest(
        &manifest,
        serde_json::json!({
            "scene": {
                "height": 40, "width": 40,
                "background": {"c11": 1.0, "c22": 0.5},
                "regions": [{"rect": {"row": 6, "col": 6, "height": 10, "width": 10},
                             "cov": {"c11": 2.5, "c22": 0.8}}]
            },
            "script": {"epochs": 3, "events": []},
            "seed": seed,
            "output_dir": root.join("sim").to_str().unwrap(),
        }),
    );
    let out = run(&["simulate", manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    root.join("sim/stack.json")
}

#[test]
fn missing_manifest_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("simulate.json");
    write_manifest(
        &manifest,
        serde_json::json!({
            "scene": {"height": 8, "width": 8, "background": {"c11": 1.0, "c22": 0.5}},
            "output_dir": "out"
        }),
    );
    let out = run(&["simulate", manifest.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("missing field") && err.contains("seed"), "{err}");
}

#[test]
fn unknown_manifest_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("changemask.json");
    write_manifest(
        &manifest,
        serde_json::json!({
            "stack": "s.json",
            "mask_output": "m.mask",
            "window": 4
        }),
    );
    let out = run(&["changemask", manifest.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("unknown field") && err.contains("window"), "{err}");
}

#[test]
fn evaluate_reports_out_of_bounds_rois_by_label() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    simulate_small(root, 11);
    let epoch = root.join("sim/epoch_00.c2");
    let manifest = root.join("evaluate.json");
    write_manifest(
        &manifest,
        serde_json::json!({
            "original": epoch.to_str().unwrap(),
            "filtered": epoch.to_str().unwrap(),
            "rois": [{"row0": 30, "col0": 30, "height": 16, "width": 16, "label": "patchZ"}],
            "output": root.join("metrics.csv").to_str().unwrap(),
        }),
    );
    let out = run(&["evaluate", manifest.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("patchZ") && err.contains("exceeds"), "{err}");
    assert!(!root.join("metrics.csv").exists());
}

#[test]
fn despeckle_warns_on_norm_mismatch_and_the_checkpoint_wins() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let stack = simulate_small(root, 21);

    let ds_manifest = root.join("dataset.json");
    write_manifest(
        &ds_manifest,
        serde_json::json!({
            "stack": stack.to_str().unwrap(),
            "count": 24, "patch": 16,
            "seed": 9,
            "output": root.join("train.psd").to_str().unwrap(),
        }),
    );
    let out = run(&["dataset", ds_manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let train_manifest = root.join("train.json");
    write_manifest(
        &train_manifest,
        serde_json::json!({
            "dataset": root.join("train.psd").to_str().unwrap(),
            "net": {"depth": 3, "width": 6},
            "train": {"epochs": 1, "batch_size": 8},
            "seed": 2,
            "checkpoint_output": root.join("net.psm").to_str().unwrap(),
            "log_output": root.join("log.csv").to_str().unwrap(),
        }),
    );
    let out = run(&["train", train_manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    // Despeckle with deliberately wrong normalization bounds in the
    // manifest: a warning must name the conflict, the checkpoint must win.
    let mismatched = root.join("despeckle_mismatch.json");
    write_manifest(
        &mismatched,
        serde_json::json!({
            "input": root.join("sim/epoch_00.c2").to_str().unwrap(),
            "checkpoint": root.join("net.psm").to_str().unwrap(),
            "tile": 32, "overlap": 8,
            "norm_stats": {"x_min": [0.0, 0.0, 0.0, 0.0], "x_max": [9.0, 9.0, 9.0, 9.0]},
            "output": root.join("filtered_a.c2").to_str().unwrap(),
        }),
    );
    let out = run(&["despeckle", mismatched.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(err.contains("checkpoint wins"), "{err}");

    // Same run without the override: byte-identical, proving the stated
    // precedence (the manifest stats were ignored).
    let plain = root.join("despeckle_plain.json");
    write_manifest(
        &plain,
        serde_json::json!({
            "input": root.join("sim/epoch_00.c2").to_str().unwrap(),
            "checkpoint": root.join("net.psm").to_str().unwrap(),
            "tile": 32, "overlap": 8,
            "output": root.join("filtered_b.c2").to_str().unwrap(),
        }),
    );
    let out = run(&["despeckle", plain.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(!err.contains("checkpoint wins"), "{err}");
    assert_eq!(
        fs::read(root.join("filtered_a.c2")).unwrap(),
        fs::read(root.join("filtered_b.c2")).unwrap()
    );
}

#[test]
fn changemask_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let stack = simulate_small(root, 31);
    for (name, threads) in [("a", "1"), ("b", "3")] {
        let manifest = root.join(format!("changemask_{name}.json"));
        write_manifest(
            &manifest,
            serde_json::json!({
                "stack": stack.to_str().unwrap(),
                "window_az": 3, "window_rg": 3,
                "significance": 1e-6,
                "mask_output": root.join(format!("{name}.mask")).to_str().unwrap(),
                "probability_output": root.join(format!("{name}.f32")).to_str().unwrap(),
            }),
        );
        let out = run(&[
            "changemask",
            manifest.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    assert_eq!(
        fs::read(root.join("a.mask")).unwrap(),
        fs::read(root.join("b.mask")).unwrap()
    );
    assert_eq!(
        fs::read(root.join("a.f32")).unwrap(),
        fs::read(root.join("b.f32")).unwrap()
    );
}

#[test]
fn quicklook_writes_a_png() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    simulate_small(root, 41);
    let png = root.join("ql.png");
    let out = run(&[
        "quicklook",
        root.join("sim/epoch_00.c2").to_str().unwrap(),
        png.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let bytes = fs::read(&png).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
}

#[test]
fn missing_inputs_fail_with_the_path_in_the_message() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let manifest = root.join("despeckle.json");
    write_manifest(
        &manifest,
        serde_json::json!({
            "input": root.join("nope.c2").to_str().unwrap(),
            "checkpoint": root.join("missing.psm").to_str().unwrap(),
            "output": root.join("out.c2").to_str().unwrap(),
        }),
    );
    let out = run(&["despeckle", manifest.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("missing.psm"), "{err}");
}
