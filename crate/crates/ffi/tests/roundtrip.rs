//! Exercises the C ABI from Rust: handle lifecycle, error reporting, and
//! agreement with the underlying library.

use std::ffi::{CStr, CString};

use polsar_despeckle::dataset::NormStats;
use polsar_despeckle::dncnn::{write_model, NetConfig, Network, NetworkModel};
use polsar_despeckle::metrics::{enl, RegionOfInterest};
use polsar_despeckle::raster::io::read_c2;
use polsar_despeckle::raster::C2Raster;

use polsar_despeckle_ffi::*;

fn cstring(path: &std::path::Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(psd_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

/// A small raster with texture in every plane.
fn sample_raster() -> C2Raster {
    let mut c2 = C2Raster::zeros(24, 20);
    for r in 0..24 {
        for c in 0..20 {
            let i = c2.idx(r, c);
            c2.c11[i] = 1.0 + 0.1 * ((r * 7 + c) % 5) as f64;
            c2.c22[i] = 0.5 + 0.05 * ((r + 3 * c) % 4) as f64;
            c2.c12[i] = num_complex_value(r, c);
        }
    }
    c2
}

fn num_complex_value(r: usize, c: usize) -> num_complex::Complex64 {
    num_complex::Complex64::new(0.1 * (r % 3) as f64, -0.05 * (c % 3) as f64)
}

#[test]
fn raster_round_trip_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let original = sample_raster();
    let path_in = dir.path().join("in.c2");
    polsar_despeckle::raster::io::write_c2(&path_in, &original).unwrap();

    unsafe {
        let handle = psd_c2_read(cstring(&path_in).as_ptr());
        assert!(!handle.is_null(), "{}", last_error());
        assert_eq!(psd_c2_height(handle), 24);
        assert_eq!(psd_c2_width(handle), 20);

        let mut plane = vec![0.0f64; 24 * 20];
        let status = psd_c2_copy_plane(handle, 0, plane.as_mut_ptr(), plane.len());
        assert_eq!(status, PsdStatus::Ok);
        assert_eq!(plane, original.c11);
        let status = psd_c2_copy_plane(handle, 3, plane.as_mut_ptr(), plane.len());
        assert_eq!(status, PsdStatus::Ok);
        let ims: Vec<f64> = original.c12.iter().map(|z| z.im).collect();
        assert_eq!(plane, ims);

        let path_out = dir.path().join("out.c2");
        let status = psd_c2_write(handle, cstring(&path_out).as_ptr());
        assert_eq!(status, PsdStatus::Ok, "{}", last_error());
        assert_eq!(read_c2(&path_out).unwrap(), original);

        psd_c2_free(handle);
    }
}

#[test]
fn failures_return_null_and_describe_themselves() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("not_there.c2");
    unsafe {
        let handle = psd_c2_read(cstring(&missing).as_ptr());
        assert!(handle.is_null());
        assert!(last_error().contains("not_there.c2"), "{}", last_error());

        let status = psd_c2_write(std::ptr::null(), cstring(&missing).as_ptr());
        assert_eq!(status, PsdStatus::NullArgument);
        assert!(last_error().contains("raster"), "{}", last_error());

        let model = psd_model_load(cstring(&missing).as_ptr());
        assert!(model.is_null());

        // Free functions tolerate null.
        psd_c2_free(std::ptr::null_mut());
        psd_model_free(std::ptr::null_mut());
    }
}

#[test]
fn bad_plane_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.c2");
    polsar_despeckle::raster::io::write_c2(&path, &sample_raster()).unwrap();
    unsafe {
        let handle = psd_c2_read(cstring(&path).as_ptr());
        assert!(!handle.is_null());
        let mut buf = vec![0.0f64; 10];
        let status = psd_c2_copy_plane(handle, 0, buf.as_mut_ptr(), buf.len());
        assert_eq!(status, PsdStatus::InvalidArgument);
        assert!(last_error().contains("480"), "{}", last_error());
        let mut full = vec![0.0f64; 24 * 20];
        let status = psd_c2_copy_plane(handle, 9, full.as_mut_ptr(), full.len());
        assert_eq!(status, PsdStatus::InvalidArgument);
        psd_c2_free(handle);
    }
}

#[test]
fn despeckling_with_a_zero_model_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let raster_path = dir.path().join("r.c2");
    let original = sample_raster();
    polsar_despeckle::raster::io::write_c2(&raster_path, &original).unwrap();

    // A zero network predicts zero residual, so the filter reduces to
    // normalize -> denormalize; with generous bounds nothing clips.
    let cfg = NetConfig {
        depth: 3,
        width: 4,
        ..Default::default()
    };
    let model = NetworkModel {
        net: Network::<f32>::zeros(&cfg).unwrap(),
        norm: NormStats {
            x_min: [0.0; 4],
            x_max: [10.0; 4],
        },
    };
    let model_path = dir.path().join("zero.psm");
    write_model(&model_path, &model).unwrap();

    unsafe {
        let raster = psd_c2_read(cstring(&raster_path).as_ptr());
        let handle = psd_model_load(cstring(&model_path).as_ptr());
        assert!(!handle.is_null(), "{}", last_error());
        assert_eq!(psd_model_receptive_field(handle), 7);

        let filtered = psd_despeckle(raster, handle, 16, 4, false);
        assert!(!filtered.is_null(), "{}", last_error());
        assert_eq!(psd_c2_height(filtered), 24);

        let mut plane = vec![0.0f64; 24 * 20];
        psd_c2_copy_plane(filtered, 0, plane.as_mut_ptr(), plane.len());
        for (a, b) in plane.iter().zip(&original.c11) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }

        // Null-model failures leave the inputs untouched.
        let bad = psd_despeckle(raster, std::ptr::null(), 0, 0, true);
        assert!(bad.is_null());
        assert!(last_error().contains("model"), "{}", last_error());

        psd_c2_free(filtered);
        psd_model_free(handle);
        psd_c2_free(raster);
    }
}

#[test]
fn enl_agrees_with_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.c2");
    let c2 = sample_raster();
    polsar_despeckle::raster::io::write_c2(&path, &c2).unwrap();
    let expected = enl(&c2, &RegionOfInterest::full(24, 20, "roi")).unwrap();
    unsafe {
        let handle = psd_c2_read(cstring(&path).as_ptr());
        let mut value = 0.0f64;
        let status = psd_enl(handle, 0, 0, 24, 20, &mut value);
        assert_eq!(status, PsdStatus::Ok, "{}", last_error());
        assert_eq!(value.to_bits(), expected.value.to_bits());

        // Out-of-bounds region: invalid-argument status, message intact.
        let status = psd_enl(handle, 20, 0, 24, 20, &mut value);
        assert_eq!(status, PsdStatus::InvalidArgument);
        assert!(last_error().contains("exceeds"), "{}", last_error());
        psd_c2_free(handle);
    }
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(psd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
