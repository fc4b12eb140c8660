//! Exit-code and artifact contracts of the command-line interface, driven
//! through the compiled binary on a miniature dataset.

use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sinoct")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().unwrap()
}

/// gen-data + a 1-epoch msm train into `dir`, returning (data, ckpt) paths.
fn small_pipeline(dir: &Path) -> (String, String) {
    let data = dir.join("data").to_str().unwrap().to_string();
    let ckpt = dir.join("msm").to_str().unwrap().to_string();
    let out = run(&[
        "gen-data", "--side", "16", "--angles", "12", "--n-train", "24",
        "--n-eval", "4", "--seed", "1", "--out", &data,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "train", "--task", "msm", "--data", &data, "--epochs", "1",
        "--d-model", "16", "--heads", "2", "--enc-layers", "1",
        "--dec-layers", "1", "--d-ff", "32", "--patch-side", "4",
        "--out", &ckpt,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (data, ckpt)
}

#[test]
fn pipeline_produces_expected_artifacts() {
    let dir = TempDir::new().unwrap();
    let (data, ckpt) = small_pipeline(dir.path());

    for rel in [
        "train_images.tc", "train_sinos.tc", "eval_images.tc",
        "eval_sinos.tc", "manifest.json", "run_manifest.json",
    ] {
        assert!(Path::new(&data).join(rel).exists(), "missing {rel}");
    }
    assert!(Path::new(&ckpt).join("manifest.json").exists());
    assert!(Path::new(&ckpt).join("convergence.csv").exists());
    assert!(Path::new(&ckpt).join("params").is_dir());

    // Inference on one eval sinogram with attention export.
    let input = dir.path().join("sample.tc");
    {
        use sinoct::container::Container;
        let c = Container::load(&Path::new(&data).join("eval_sinos.tc")).unwrap();
        let per = c.shape[1] * c.shape[2];
        Container::new(vec![c.shape[1], c.shape[2]], c.data[..per].to_vec())
            .unwrap()
            .save(&input)
            .unwrap();
    }
    let inf = dir.path().join("infer").to_str().unwrap().to_string();
    let out = run(&[
        "infer", "--task", "msm", "--ckpt", &ckpt,
        "--input", input.to_str().unwrap(), "--mask-ratio", "0.5",
        "--export-attention", "0", "--out", &inf,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&inf).join("pred_sino.tc").exists());
    assert!(Path::new(&inf).join("pred_sino.pgm").exists());
    assert!(Path::new(&inf).join("attention_l0_h0.pgm").exists());
    assert!(Path::new(&inf).join("attention_l0_h1.pgm").exists());

    // Eval sweep with triptychs.
    let ev = dir.path().join("eval").to_str().unwrap().to_string();
    let out = run(&[
        "eval", "--data", &data, "--sweep", "mask", "--scheme", "random",
        "--values", "0.5", "--ckpt-msm", &ckpt, "--out", &ev,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&ev).join("sweep_ssim.csv").exists());
    assert!(Path::new(&ev).join("sweep_psnr.csv").exists());
    assert!(Path::new(&ev).join("per_sample.csv").exists());
    let triptychs = std::fs::read_dir(&ev)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("triptych_")
        })
        .count();
    assert!(triptychs > 0, "no triptych PGMs written");
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let (data, ckpt) = small_pipeline(dir.path());

    // Empty sweep values.
    let out = run(&[
        "eval", "--data", &data, "--sweep", "mask", "--values", "",
        "--out", dir.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown sweep axis.
    let out = run(&[
        "eval", "--data", &data, "--sweep", "zig", "--values", "0.5",
        "--out", dir.path().join("e2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Task/checkpoint mismatch on infer.
    let input = Path::new(&data).join("eval_sinos.tc");
    let out = run(&[
        "infer", "--task", "svtx", "--ckpt", &ckpt,
        "--input", input.to_str().unwrap(),
        "--out", dir.path().join("i").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // ctx without a base checkpoint.
    let out = run(&[
        "train", "--task", "ctx", "--data", &data, "--epochs", "1",
        "--out", dir.path().join("c").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "train", "--task", "msm", "--data", "/nonexistent/data",
        "--out", dir.path().join("t").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let out = run(&[
        "infer", "--task", "msm", "--ckpt", "/nonexistent/ckpt",
        "--input", "/nonexistent/sino.tc",
        "--out", dir.path().join("i").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_skips_missing_checkpoint_with_warning() {
    let dir = TempDir::new().unwrap();
    let (data, ckpt) = small_pipeline(dir.path());
    let ev = dir.path().join("eval").to_str().unwrap().to_string();
    let out = run(&[
        "eval", "--data", &data, "--sweep", "mask", "--scheme", "uniform",
        "--values", "0.5", "--ckpt-msm", &ckpt,
        "--ckpt-svtx", "/nonexistent/svtx", "--out", &ev,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning"), "no warning on stderr: {stderr}");
    let csv = std::fs::read_to_string(Path::new(&ev).join("sweep_ssim.csv")).unwrap();
    assert!(csv.contains("msm+iradon"));
    assert!(!csv.contains("svtx"));
}
