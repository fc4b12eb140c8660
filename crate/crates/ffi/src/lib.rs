//! C ABI for the sinoct pipeline: flat-buffer wrappers around the forward
//! projector, FBP, quality metrics, and checkpoint inference.
//!
//! Conventions:
//! - All functions return a `SinoctStatus` code; outputs go through caller
//!   allocated buffers or opaque handles.
//! - Images are row-major `side * side` f32; sinograms are row-major
//!   `n_angles * n_bins` f32 with one row per view angle.
//! - Handles must be released with the matching `_free` function; passing
//!   null to a `_free` is a no-op.

use std::cell::RefCell;
use std::ffi::CStr;
use std::os::raw::{c_char, c_int};
use std::path::Path;
use std::slice;

use sinoct::ctgeom::{fbp, radon, AngleGrid, FbpFilter, MaskedSinogram, Sinogram};
use sinoct::error::Error;
use sinoct::metrics::{psnr, ssim};
use sinoct::phantom::PhantomImage;
use sinoct::trainer::{load_checkpoint, Checkpoint};

/// Result codes mirroring the process exit codes of the CLI.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SinoctStatus {
    Ok = 0,
    /// Invalid argument, shape, or contract violation.
    Invalid = 2,
    /// File could not be read or parsed.
    Io = 3,
    /// Numeric failure (non-finite values).
    Numeric = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(e: Error) -> SinoctStatus {
    let code = match e.exit_code() {
        3 => SinoctStatus::Io,
        4 => SinoctStatus::Numeric,
        _ => SinoctStatus::Invalid,
    };
    LAST_ERROR.with(|s| *s.borrow_mut() = e.to_string());
    code
}

fn fail_msg(msg: &str) -> SinoctStatus {
    LAST_ERROR.with(|s| *s.borrow_mut() = msg.to_string());
    SinoctStatus::Invalid
}

/// Copies the message of the most recent error on this thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn sinoct_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|s| {
        let msg = s.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Forward-projects a `side * side` image into `n_angles * side` sinogram
/// rows over a half turn starting at 0 degrees.
///
/// # Safety
/// `image` must point to `side * side` readable f32; `out_sino` to
/// `n_angles * side` writable f32.
#[no_mangle]
pub unsafe extern "C" fn sinoct_radon(
    image: *const f32,
    side: usize,
    n_angles: usize,
    out_sino: *mut f32,
) -> SinoctStatus {
    if image.is_null() || out_sino.is_null() {
        return fail_msg("null pointer");
    }
    let pixels = slice::from_raw_parts(image, side * side).to_vec();
    let img = match PhantomImage::new(side, pixels) {
        Ok(i) => i,
        Err(e) => return fail(e),
    };
    match radon(&img, &AngleGrid::half_turn(n_angles)) {
        Ok(sino) => {
            slice::from_raw_parts_mut(out_sino, n_angles * side).copy_from_slice(&sino.values);
            SinoctStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Reconstructs an image by filtered back-projection. `filter` is 0 for
/// Ram-Lak, 1 for Hann, 2 for no filtering.
///
/// # Safety
/// `sino` must point to `n_angles * n_bins` readable f32; `out_image` to
/// `n_bins * n_bins` writable f32.
#[no_mangle]
pub unsafe extern "C" fn sinoct_fbp(
    sino: *const f32,
    n_angles: usize,
    n_bins: usize,
    filter: c_int,
    out_image: *mut f32,
) -> SinoctStatus {
    if sino.is_null() || out_image.is_null() {
        return fail_msg("null pointer");
    }
    let filter = match filter {
        0 => FbpFilter::RamLak,
        1 => FbpFilter::Hann,
        2 => FbpFilter::None,
        _ => return fail_msg("filter must be 0 (ramlak), 1 (hann), or 2 (none)"),
    };
    let s = Sinogram {
        grid: AngleGrid::half_turn(n_angles),
        n_bins,
        values: slice::from_raw_parts(sino, n_angles * n_bins).to_vec(),
    };
    match fbp(&s, filter) {
        Ok(img) => {
            slice::from_raw_parts_mut(out_image, n_bins * n_bins).copy_from_slice(&img.values);
            SinoctStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Mean SSIM between two `side * side` images with the given dynamic range.
///
/// # Safety
/// `a`, `b` must point to `side * side` readable f32; `out` to one f64.
#[no_mangle]
pub unsafe extern "C" fn sinoct_ssim(
    a: *const f32,
    b: *const f32,
    side: usize,
    dynamic_range: f64,
    out: *mut f64,
) -> SinoctStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return fail_msg("null pointer");
    }
    let av = slice::from_raw_parts(a, side * side);
    let bv = slice::from_raw_parts(b, side * side);
    match ssim(av, bv, side, dynamic_range as f32) {
        Ok(v) => {
            *out = v;
            SinoctStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// PSNR in dB between two `side * side` images (capped at 99 dB).
///
/// # Safety
/// `a`, `b` must point to `side * side` readable f32; `out` to one f64.
#[no_mangle]
pub unsafe extern "C" fn sinoct_psnr(
    a: *const f32,
    b: *const f32,
    side: usize,
    dynamic_range: f64,
    out: *mut f64,
) -> SinoctStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return fail_msg("null pointer");
    }
    let av = slice::from_raw_parts(a, side * side);
    let bv = slice::from_raw_parts(b, side * side);
    match psnr(av, bv, side, dynamic_range as f32) {
        Ok(v) => {
            *out = v;
            SinoctStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Opaque trained-model handle.
pub struct SinoctModel {
    ck: Checkpoint,
}

/// Loads a checkpoint directory (as written by `sinoct train`) and stores a
/// handle in `out`. Free with `sinoct_model_free`.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path; `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn sinoct_model_load(
    dir: *const c_char,
    out: *mut *mut SinoctModel,
) -> SinoctStatus {
    if dir.is_null() || out.is_null() {
        return fail_msg("null pointer");
    }
    let Ok(path) = CStr::from_ptr(dir).to_str() else {
        return fail_msg("checkpoint path is not valid UTF-8");
    };
    match load_checkpoint(Path::new(path)) {
        Ok(ck) => {
            *out = Box::into_raw(Box::new(SinoctModel { ck }));
            SinoctStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `model` must come from `sinoct_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sinoct_model_free(model: *mut SinoctModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of view angles the model was trained for.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sinoct_model_n_angles(model: *const SinoctModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).ck.meta.model_config.max_angles
}

/// Detector bin count (= image side) of the model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sinoct_model_n_bins(model: *const SinoctModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).ck.meta.model_config.token_dim
}

unsafe fn masked_input(
    model: &SinoctModel,
    sino: *const f32,
    kept: *const usize,
    n_kept: usize,
) -> Result<MaskedSinogram, Error> {
    let cfg = &model.ck.meta.model_config;
    let n_angles = cfg.max_angles;
    let n_bins = cfg.token_dim;
    let values = slice::from_raw_parts(sino, n_angles * n_bins).to_vec();
    let kept_indices = slice::from_raw_parts(kept, n_kept).to_vec();
    if let Some(&bad) = kept_indices.iter().find(|&&i| i >= n_angles) {
        return Err(Error::Contract(format!(
            "kept index {bad} out of range for {n_angles} angles"
        )));
    }
    Ok(MaskedSinogram {
        sinogram: Sinogram {
            grid: AngleGrid::half_turn(n_angles),
            n_bins,
            values,
        },
        kept_indices,
    })
}

/// Inpaints a masked sinogram with a sinogram-head model (msm, svtx, dntx).
/// `sino` holds the full `n_angles * n_bins` grid with masked rows zeroed;
/// `kept` lists the visible row indices. Writes the completed sinogram.
///
/// # Safety
/// Buffer sizes must match the model's `n_angles * n_bins`; `kept` must
/// point to `n_kept` readable usize.
#[no_mangle]
pub unsafe extern "C" fn sinoct_model_infer_sino(
    model: *const SinoctModel,
    sino: *const f32,
    kept: *const usize,
    n_kept: usize,
    out_sino: *mut f32,
) -> SinoctStatus {
    if model.is_null() || sino.is_null() || kept.is_null() || out_sino.is_null() {
        return fail_msg("null pointer");
    }
    let model = &*model;
    let masked = match masked_input(model, sino, kept, n_kept) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    match model.ck.restore_sino(&masked) {
        Ok(pred) => {
            slice::from_raw_parts_mut(out_sino, pred.values.len()).copy_from_slice(&pred.values);
            SinoctStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Reconstructs an image directly with an image-head (ctx) model. Writes a
/// `side * side` image where side = `sinoct_model_n_bins`.
///
/// # Safety
/// Same buffer contracts as `sinoct_model_infer_sino`; `out_image` must
/// hold `side * side` writable f32.
#[no_mangle]
pub unsafe extern "C" fn sinoct_model_infer_image(
    model: *const SinoctModel,
    sino: *const f32,
    kept: *const usize,
    n_kept: usize,
    out_image: *mut f32,
) -> SinoctStatus {
    if model.is_null() || sino.is_null() || kept.is_null() || out_image.is_null() {
        return fail_msg("null pointer");
    }
    let model = &*model;
    let masked = match masked_input(model, sino, kept, n_kept) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    match model.ck.model.infer_image(&masked, model.ck.meta.norm_scale) {
        Ok(img) => {
            slice::from_raw_parts_mut(out_image, img.len()).copy_from_slice(&img);
            SinoctStatus::Ok
        }
        Err(e) => fail(e),
    }
}
