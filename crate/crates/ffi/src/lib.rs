//! C ABI over the despeckling core: opaque handles, integer status codes,
//! and a thread-local last-error message.
//!
//! Conventions:
//!
//! * Functions returning a pointer return null on failure; functions
//!   returning [`PsdStatus`] return `Ok` (0) on success. In either failure
//!   case [`psd_last_error_message`] describes the problem for the calling
//!   thread.
//! * Every entry point catches panics and reports them as
//!   `PSD_STATUS_INTERNAL_ERROR` instead of unwinding across the boundary.
//! * Handles are released exactly once with their matching `_free`
//!   function; the `_free` functions accept and ignore null.
//!
//! The C header is generated into `include/polsar_despeckle.h` at build
//! time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use polsar_despeckle::dncnn::{despeckle_raster, read_model, InferParams, NetworkModel};
use polsar_despeckle::error::Error;
use polsar_despeckle::metrics::{enl, RegionOfInterest};
use polsar_despeckle::raster::io::{read_c2, write_c2};
use polsar_despeckle::raster::C2Raster;

/// Opaque handle to a dual-pol covariance raster.
pub struct PsdC2Raster(C2Raster);

/// Opaque handle to a trained despeckling model.
pub struct PsdModel(NetworkModel);

/// Status code of a fallible call. Anything but `Ok` leaves a description
/// in `psd_last_error_message`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument failed validation (encoding, bounds, geometry, config).
    InvalidArgument = 2,
    /// The operating system reported an I/O failure.
    IoError = 3,
    /// A file or raster decoded but its content is unusable.
    DataError = 4,
    /// A panic was caught at the boundary; state is unchanged but the
    /// library's invariants should be considered suspect.
    InternalError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("NULs stripped"));
}

fn status_of(err: &Error) -> PsdStatus {
    match err {
        Error::Io { .. } => PsdStatus::IoError,
        Error::Config(_) | Error::Input(_) | Error::Geometry(_) | Error::Roi { .. } => {
            PsdStatus::InvalidArgument
        }
        _ => PsdStatus::DataError,
    }
}

type FfiResult<T> = Result<T, (PsdStatus, String)>;

fn fail<T>(status: PsdStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err((status, msg.into()))
}

fn from_core<T>(r: polsar_despeckle::error::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

/// Runs a fallible body, trapping panics; failures set the thread error.
fn run_status(f: impl FnOnce() -> FfiResult<()>) -> PsdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PsdStatus::InternalError
        }
    }
}

/// Pointer-returning twin of [`run_status`]: null signals failure.
fn run_ptr<T>(f: impl FnOnce() -> FfiResult<*mut T>) -> *mut T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(p)) => p,
        Ok(Err((_, msg))) => {
            set_error(&msg);
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated C string.
unsafe fn path_arg(ptr: *const c_char, what: &str) -> FfiResult<PathBuf> {
    if ptr.is_null() {
        return fail(PsdStatus::NullArgument, format!("{what} is null"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s).to_path_buf()),
        Err(_) => fail(
            PsdStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        ),
    }
}

unsafe fn handle_arg<'a, T>(ptr: *const T, what: &str) -> FfiResult<&'a T> {
    match ptr.as_ref() {
        Some(r) => Ok(r),
        None => fail(PsdStatus::NullArgument, format!("{what} is null")),
    }
}

/// Message of the most recent failure on the calling thread, or an empty
/// string. The pointer stays valid until the next failing call on the same
/// thread. Do not free it.
#[no_mangle]
pub extern "C" fn psd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string. Do not free it.
#[no_mangle]
pub extern "C" fn psd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Reads a PSR1 C2 raster from disk. Returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated C string.
#[no_mangle]
pub unsafe extern "C" fn psd_c2_read(path: *const c_char) -> *mut PsdC2Raster {
    run_ptr(|| {
        let path = path_arg(path, "path")?;
        let c2 = from_core(read_c2(&path))?;
        Ok(Box::into_raw(Box::new(PsdC2Raster(c2))))
    })
}

/// Writes a C2 raster to disk as PSR1.
///
/// # Safety
/// `raster` must be a live handle from this library; `path` must be a
/// valid NUL-terminated C string.
#[no_mangle]
pub unsafe extern "C" fn psd_c2_write(raster: *const PsdC2Raster, path: *const c_char) -> PsdStatus {
    run_status(|| {
        let raster = handle_arg(raster, "raster")?;
        let path = path_arg(path, "path")?;
        from_core(write_c2(&path, &raster.0))
    })
}

/// Row count of a raster handle; 0 if the handle is null.
///
/// # Safety
/// `raster` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn psd_c2_height(raster: *const PsdC2Raster) -> usize {
    raster.as_ref().map_or(0, |r| r.0.height)
}

/// Column count of a raster handle; 0 if the handle is null.
///
/// # Safety
/// `raster` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn psd_c2_width(raster: *const PsdC2Raster) -> usize {
    raster.as_ref().map_or(0, |r| r.0.width)
}

/// Copies one raster plane into a caller buffer of `len == height*width`
/// doubles. Planes: 0 = c11, 1 = c22, 2 = Re(c12), 3 = Im(c12).
///
/// # Safety
/// `raster` must be a live handle; `out` must point to at least `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn psd_c2_copy_plane(
    raster: *const PsdC2Raster,
    plane: u32,
    out: *mut f64,
    len: usize,
) -> PsdStatus {
    run_status(|| {
        let raster = &handle_arg(raster, "raster")?.0;
        if out.is_null() {
            return fail(PsdStatus::NullArgument, "out is null");
        }
        if len != raster.len() {
            return fail(
                PsdStatus::InvalidArgument,
                format!("len {len} does not match {} pixels", raster.len()),
            );
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        match plane {
            0 => dst.copy_from_slice(&raster.c11),
            1 => dst.copy_from_slice(&raster.c22),
            2 => dst
                .iter_mut()
                .zip(&raster.c12)
                .for_each(|(d, z)| *d = z.re),
            3 => dst
                .iter_mut()
                .zip(&raster.c12)
                .for_each(|(d, z)| *d = z.im),
            _ => return fail(PsdStatus::InvalidArgument, format!("plane {plane} not in 0..4")),
        }
        Ok(())
    })
}

/// Releases a raster handle. Null is ignored.
///
/// # Safety
/// `raster` must be null or a live handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psd_c2_free(raster: *mut PsdC2Raster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// Loads a PSM1 model checkpoint. Returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated C string.
#[no_mangle]
pub unsafe extern "C" fn psd_model_load(path: *const c_char) -> *mut PsdModel {
    run_ptr(|| {
        let path = path_arg(path, "path")?;
        let model = from_core(read_model(&path))?;
        Ok(Box::into_raw(Box::new(PsdModel(model))))
    })
}

/// Receptive field of a model in pixels — the minimum sensible tile size;
/// 0 if the handle is null.
///
/// # Safety
/// `model` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn psd_model_receptive_field(model: *const PsdModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.net.config.receptive_field())
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psd_model_free(model: *mut PsdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Despeckles a raster with a trained model, returning a new raster handle
/// (null on failure). `tile` or `overlap` of 0 selects the defaults
/// (256 / 16). `project_psd` projects each output pixel back onto the
/// positive-semidefinite cone.
///
/// # Safety
/// `raster` and `model` must be live handles from this library.
#[no_mangle]
pub unsafe extern "C" fn psd_despeckle(
    raster: *const PsdC2Raster,
    model: *const PsdModel,
    tile: usize,
    overlap: usize,
    project_psd: bool,
) -> *mut PsdC2Raster {
    run_ptr(|| {
        let raster = handle_arg(raster, "raster")?;
        let model = handle_arg(model, "model")?;
        let defaults = InferParams::default();
        let params = InferParams {
            tile: if tile == 0 { defaults.tile } else { tile },
            overlap: if overlap == 0 { defaults.overlap } else { overlap },
            project_psd,
        };
        let (filtered, _report) = from_core(despeckle_raster(&raster.0, &model.0, &params))?;
        Ok(Box::into_raw(Box::new(PsdC2Raster(filtered))))
    })
}

/// Polarimetric equivalent number of looks over the rectangle of
/// `height` x `width` pixels at (`row0`, `col0`), written through
/// `out_enl`. A perfectly constant region yields +infinity.
///
/// # Safety
/// `raster` must be a live handle; `out_enl` must point to a writable
/// double.
#[no_mangle]
pub unsafe extern "C" fn psd_enl(
    raster: *const PsdC2Raster,
    row0: usize,
    col0: usize,
    height: usize,
    width: usize,
    out_enl: *mut f64,
) -> PsdStatus {
    run_status(|| {
        let raster = handle_arg(raster, "raster")?;
        if out_enl.is_null() {
            return fail(PsdStatus::NullArgument, "out_enl is null");
        }
        let roi = RegionOfInterest {
            row0,
            col0,
            height,
            width,
            label: "ffi".to_string(),
        };
        let est = from_core(enl(&raster.0, &roi))?;
        *out_enl = est.value;
        Ok(())
    })
}
