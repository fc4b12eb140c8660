//! Exercises the C ABI from Rust the way a foreign caller would: raw
//! pointers, status codes, and the thread-local error message.

use std::ffi::CString;

use sinoct_ffi::*;

fn phantom_image(side: usize) -> Vec<f32> {
    let img = sinoct::phantom::generate_phantom(
        &sinoct::phantom::PhantomConfig {
            image_side: side,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    img.values
}

#[test]
fn radon_fbp_roundtrip_through_abi() {
    let side = 32;
    let n_angles = 30;
    let img = phantom_image(side);
    let mut sino = vec![0.0f32; n_angles * side];
    let st = unsafe { sinoct_radon(img.as_ptr(), side, n_angles, sino.as_mut_ptr()) };
    assert_eq!(st, SinoctStatus::Ok);
    assert!(sino.iter().any(|&v| v > 0.0));

    let mut rec = vec![0.0f32; side * side];
    let st = unsafe { sinoct_fbp(sino.as_ptr(), n_angles, side, 0, rec.as_mut_ptr()) };
    assert_eq!(st, SinoctStatus::Ok);

    let rec: Vec<f32> = rec.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut s = 0.0f64;
    let st = unsafe { sinoct_ssim(rec.as_ptr(), img.as_ptr(), side, 1.0, &mut s) };
    assert_eq!(st, SinoctStatus::Ok);
    assert!(s > 0.5, "round-trip SSIM {s} too low");

    let mut p = 0.0f64;
    let st = unsafe { sinoct_psnr(rec.as_ptr(), img.as_ptr(), side, 1.0, &mut p) };
    assert_eq!(st, SinoctStatus::Ok);
    assert!(p > 10.0, "round-trip PSNR {p} too low");
}

#[test]
fn null_pointers_and_bad_filter_are_rejected() {
    let side = 8;
    let buf = vec![0.0f32; side * side];
    let mut out = vec![0.0f32; side * side];
    let st = unsafe { sinoct_radon(std::ptr::null(), side, 4, out.as_mut_ptr()) };
    assert_eq!(st, SinoctStatus::Invalid);
    let st = unsafe { sinoct_fbp(buf.as_ptr(), 4, side, 9, out.as_mut_ptr()) };
    assert_eq!(st, SinoctStatus::Invalid);

    let mut msg = vec![0i8; 128];
    let n = unsafe { sinoct_last_error_message(msg.as_mut_ptr(), msg.len()) };
    assert!(n > 0);
    let text = unsafe { std::ffi::CStr::from_ptr(msg.as_ptr()) }
        .to_string_lossy()
        .into_owned();
    assert!(text.contains("filter"), "unexpected message: {text}");
}

#[test]
fn model_load_rejects_missing_directory() {
    let path = CString::new("/nonexistent/ckpt").unwrap();
    let mut handle: *mut SinoctModel = std::ptr::null_mut();
    let st = unsafe { sinoct_model_load(path.as_ptr(), &mut handle) };
    assert_eq!(st, SinoctStatus::Io);
    assert!(handle.is_null());
    unsafe { sinoct_model_free(handle) };
}

#[test]
fn model_inference_through_abi() {
    use sinoct::ctgeom::{apply_mask, AngleGrid, MaskSpec};
    use sinoct::dataset::{generate_dataset, Dataset};
    use sinoct::model::{HeadKind, ModelConfig};
    use sinoct::trainer::{pretrain_msm, save_checkpoint, Task, TrainConfig};

    let dir = tempfile::TempDir::new().unwrap();
    let phantom = sinoct::phantom::PhantomConfig {
        image_side: 16,
        ..Default::default()
    };
    generate_dataset(&phantom, &AngleGrid::half_turn(12), 16, 2, dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    let cfg = ModelConfig {
        token_dim: 16,
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        max_angles: 12,
        head_kind: HeadKind::SinoDecoder,
        patch_side: 4,
    };
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::new(Task::Msm)
    };
    let out = pretrain_msm(&ds, &cfg, &tc).unwrap();
    let ck_dir = dir.path().join("ck");
    std::fs::create_dir_all(&ck_dir).unwrap();
    save_checkpoint(&ck_dir, &out.model, &out.meta).unwrap();

    let path = CString::new(ck_dir.to_str().unwrap()).unwrap();
    let mut handle: *mut SinoctModel = std::ptr::null_mut();
    let st = unsafe { sinoct_model_load(path.as_ptr(), &mut handle) };
    assert_eq!(st, SinoctStatus::Ok);
    assert_eq!(unsafe { sinoct_model_n_angles(handle) }, 12);
    assert_eq!(unsafe { sinoct_model_n_bins(handle) }, 16);

    let masked = apply_mask(&ds.eval_sino(0), &MaskSpec::random(0.5, 3)).unwrap();
    let mut pred = vec![0.0f32; 12 * 16];
    let st = unsafe {
        sinoct_model_infer_sino(
            handle,
            masked.sinogram.values.as_ptr(),
            masked.kept_indices.as_ptr(),
            masked.kept_indices.len(),
            pred.as_mut_ptr(),
        )
    };
    assert_eq!(st, SinoctStatus::Ok);
    let reference = out
        .model
        .inpaint_sino(&masked, ds.manifest.norm_scale)
        .unwrap();
    assert_eq!(pred, reference.values);

    // Out-of-range kept index must be rejected, not crash.
    let bad = [99usize];
    let st = unsafe {
        sinoct_model_infer_sino(
            handle,
            masked.sinogram.values.as_ptr(),
            bad.as_ptr(),
            1,
            pred.as_mut_ptr(),
        )
    };
    assert_eq!(st, SinoctStatus::Invalid);
    unsafe { sinoct_model_free(handle) };
}
