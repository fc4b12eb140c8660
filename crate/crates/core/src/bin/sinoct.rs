//! Command-line entry points tying the pipeline into reproducible
//! experiments: dataset generation, training, inference, and sweep
//! evaluation with CSV/PGM outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sinoct::container::{write_pgm, Container};
use sinoct::ctgeom::{
    apply_dose, apply_mask, fbp, AngleGrid, DoseModel, FbpFilter, MaskScheme, MaskSpec,
    MaskedSinogram, Sinogram,
};
use sinoct::dataset::{generate_dataset, Dataset};
use sinoct::error::Error;
use sinoct::metrics::{clamp_unit, sweep, Method, SweepInput, SweepKind, SweepTable};
use sinoct::model::{HeadKind, ModelConfig};
use sinoct::phantom::PhantomConfig;
use sinoct::trainer::{
    compare_convergence, load_checkpoint, save_checkpoint, train, Checkpoint, Task, TrainConfig,
};

#[derive(Parser)]
#[command(name = "sinoct", version, about = "Parallel-beam CT + masked sinogram transformer pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom + sinogram dataset.
    GenData(GenDataArgs),
    /// Train one of the models (msm, svtx, dntx, ctx).
    Train(TrainArgs),
    /// Run a trained checkpoint on one sinogram.
    Infer(InferArgs),
    /// Sweep reconstruction quality across mask ratios or doses.
    Eval(EvalArgs),
    /// Fine-tune vs retrain convergence comparison for the ctx head.
    CompareConvergence(CompareArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 60)]
    angles: usize,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 200)]
    n_eval: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    enc_layers: usize,
    #[arg(long, default_value_t = 2)]
    dec_layers: usize,
    #[arg(long, default_value_t = 128)]
    d_ff: usize,
    #[arg(long, default_value_t = 8)]
    patch_side: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    data: PathBuf,
    /// Base MSM checkpoint (required for ctx with a frozen encoder).
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    mask_ratio: f32,
    /// Lower end of a per-sample random mask-ratio range for msm/ctx
    /// training; omit to train at the fixed --mask-ratio.
    #[arg(long)]
    mask_ratio_min: Option<f32>,
    /// Dose fraction for dntx.
    #[arg(long, default_value_t = 0.005)]
    dose: f64,
    #[arg(long, default_value_t = 1e4)]
    flux: f64,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = false)]
    no_freeze: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    ckpt: PathBuf,
    /// Input sinogram container (angles x bins).
    #[arg(long)]
    input: PathBuf,
    /// Degrade the input before inference; without it, all-zero rows are
    /// treated as the masked views.
    #[arg(long)]
    mask_ratio: Option<f32>,
    #[arg(long, default_value = "random")]
    mask_scheme: String,
    #[arg(long, default_value_t = 0)]
    mask_seed: u64,
    #[arg(long)]
    dose: Option<f64>,
    /// Export attention maps of this decoder layer, one PGM per head.
    #[arg(long)]
    export_attention: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Sweep axis: "mask" or "dose".
    #[arg(long)]
    sweep: String,
    /// Comma-separated condition values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    ckpt_msm: Option<PathBuf>,
    #[arg(long)]
    ckpt_svtx: Option<PathBuf>,
    #[arg(long)]
    ckpt_dntx: Option<PathBuf>,
    #[arg(long)]
    ckpt_ctx: Option<PathBuf>,
    /// Mask scheme for mask sweeps.
    #[arg(long, default_value = "uniform")]
    scheme: String,
    #[arg(long, default_value_t = 1e4)]
    flux: f64,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Accept checkpoints trained on a different dataset.
    #[arg(long, default_value_t = false)]
    allow_mismatch: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    mask_ratio: f32,
    /// Lower end of a per-sample random mask-ratio range for msm/ctx
    /// training; omit to train at the fixed --mask-ratio.
    #[arg(long)]
    mask_ratio_min: Option<f32>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    dataset_sha256: Option<String>,
    code_version: String,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<String>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    dataset_sha256: Option<String>,
    started: u64,
    outputs: &[PathBuf],
) -> Result<(), Error> {
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        dataset_sha256,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: now_unix(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = out_dir.join("run_manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("run manifest: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::CompareConvergence(a) => cmd_compare(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn cmd_gen_data(a: GenDataArgs) -> Result<(), Error> {
    let started = now_unix();
    let phantom = PhantomConfig {
        image_side: a.side,
        seed: a.seed,
        ..Default::default()
    };
    let grid = AngleGrid::half_turn(a.angles);
    let manifest = generate_dataset(&phantom, &grid, a.n_train, a.n_eval, &a.out)?;
    let config = serde_json::json!({
        "side": a.side, "angles": a.angles, "n_train": a.n_train,
        "n_eval": a.n_eval, "seed": a.seed,
    });
    write_run_manifest(
        &a.out,
        "gen-data",
        config,
        Some(manifest.data_sha256.clone()),
        started,
        &[a.out.join("manifest.json")],
    )?;
    println!(
        "dataset written to {} ({} train / {} eval, hash {})",
        a.out.display(),
        manifest.n_train,
        manifest.n_eval,
        &manifest.data_sha256[..12]
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let started = now_unix();
    let ds = Dataset::load(&a.data)?;
    let head_kind = match a.task {
        Task::Ctx => HeadKind::ImagePatchDecoder,
        _ => HeadKind::SinoDecoder,
    };
    let model_cfg = ModelConfig {
        token_dim: ds.side(),
        d_model: a.model.d_model,
        n_heads: a.model.heads,
        n_enc_layers: a.model.enc_layers,
        n_dec_layers: a.model.dec_layers,
        d_ff: a.model.d_ff,
        max_angles: ds.manifest.grid.n_angles,
        head_kind,
        patch_side: a.model.patch_side,
    };
    let freeze = a.task == Task::Ctx && !a.no_freeze;
    if freeze && a.base.is_none() {
        return Err(Error::Config {
            field: "base",
            reason: "--task ctx requires --base <MSM checkpoint> (or --no-freeze)".into(),
        });
    }
    let mask_ratio = match a.task {
        Task::Dntx => 0.0,
        _ => a.mask_ratio,
    };
    let train_cfg = TrainConfig {
        task: a.task,
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        mask_ratio,
        mask_ratio_min: a.mask_ratio_min,
        dose_fraction: a.dose,
        incident_flux: a.flux,
        val_fraction: 0.1,
        seed: a.seed,
        freeze_encoder: freeze,
        base_checkpoint: a.base.clone(),
    };
    let base = a.base.as_deref().map(load_checkpoint).transpose()?;
    let outcome = train(&ds, &model_cfg, &train_cfg, base.as_ref())?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_checkpoint(&a.out, &outcome.model, &outcome.meta)?;
    let log_path = a.out.join("convergence.csv");
    fs::write(&log_path, outcome.log.to_csv()).map_err(|e| Error::io(&log_path, e))?;
    let config = serde_json::to_value(&train_cfg).unwrap_or_default();
    write_run_manifest(
        &a.out,
        "train",
        config,
        Some(ds.manifest.data_sha256.clone()),
        started,
        &[a.out.join("manifest.json"), log_path],
    )?;
    println!(
        "trained {:?}: best val loss {:.6e} at epoch {}",
        a.task, outcome.best_val_loss, outcome.best_epoch
    );
    Ok(())
}

fn load_sino(path: &Path, grid_hint: Option<AngleGrid>) -> Result<Sinogram, Error> {
    let c = Container::load(path)?;
    if c.shape.len() != 2 {
        return Err(Error::Format(format!(
            "expected a 2-D sinogram container, got shape {:?}",
            c.shape
        )));
    }
    let grid = grid_hint.unwrap_or(AngleGrid {
        n_angles: c.shape[0],
        start_deg: 0.0,
        end_deg: 180.0,
    });
    Ok(Sinogram {
        grid,
        n_bins: c.shape[1],
        values: c.data,
    })
}

fn cmd_infer(a: InferArgs) -> Result<(), Error> {
    let started = now_unix();
    let ck = load_checkpoint(&a.ckpt)?;
    if ck.meta.train_config.task != a.task {
        return Err(Error::Contract(format!(
            "checkpoint was trained for {:?}, not {:?}",
            ck.meta.train_config.task, a.task
        )));
    }
    let sino = load_sino(&a.input, None)?;
    let norm_scale = norm_scale_for(&ck);

    let masked = if let Some(frac) = a.dose {
        let dose = DoseModel {
            incident_flux: 1e4,
            dose_fraction: frac,
            rng_seed: a.mask_seed,
        };
        let phys_scale = (100.0f64).ln() / norm_scale as f64;
        let noisy = apply_dose(&sino, &dose, phys_scale)?;
        MaskedSinogram {
            kept_indices: (0..sino.grid.n_angles).collect(),
            sinogram: noisy,
        }
    } else if let Some(ratio) = a.mask_ratio {
        let scheme = match a.mask_scheme.as_str() {
            "random" => MaskScheme::Random,
            "uniform" => MaskScheme::Uniform,
            other => {
                return Err(Error::Config {
                    field: "mask_scheme",
                    reason: format!("unknown scheme {other}"),
                })
            }
        };
        apply_mask(
            &sino,
            &MaskSpec {
                scheme,
                ratio,
                rng_seed: a.mask_seed,
            },
        )?
    } else {
        // Rows that are entirely zero are treated as masked views.
        let kept: Vec<usize> = (0..sino.grid.n_angles)
            .filter(|&i| sino.row(i).iter().any(|&v| v != 0.0))
            .collect();
        MaskedSinogram {
            sinogram: sino.clone(),
            kept_indices: kept,
        }
    };

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut outputs = Vec::new();
    match a.task {
        Task::Ctx => {
            let img = ck.model.infer_image(&masked, norm_scale)?;
            let side = ck.meta.model_config.image_side();
            let tc = a.out.join("pred_image.tc");
            Container::new(vec![side, side], img.clone())?.save(&tc)?;
            let pgm = a.out.join("pred_image.pgm");
            write_pgm(&pgm, side, side, &img)?;
            outputs.extend([tc, pgm]);
        }
        _ => {
            let pred = ck.restore_sino(&masked)?;
            let tc = a.out.join("pred_sino.tc");
            Container::new(vec![pred.grid.n_angles, pred.n_bins], pred.values.clone())?
                .save(&tc)?;
            let pgm = a.out.join("pred_sino.pgm");
            write_pgm(&pgm, pred.n_bins, pred.grid.n_angles, &pred.values)?;
            outputs.extend([tc, pgm]);
        }
    }
    if let Some(layer) = a.export_attention {
        for head in 0..ck.meta.model_config.n_heads {
            let map = ck.model.extract_attention(&masked, norm_scale, layer, head)?;
            let (q, k) = (map.weights.shape[0], map.weights.shape[1]);
            let path = a.out.join(format!("attention_l{layer}_h{head}.pgm"));
            write_pgm(&path, k, q, &map.weights.data)?;
            outputs.push(path);
        }
    }
    let config = serde_json::json!({
        "task": format!("{:?}", a.task), "ckpt": a.ckpt.display().to_string(),
        "input": a.input.display().to_string(), "mask_ratio": a.mask_ratio,
        "dose": a.dose, "export_attention": a.export_attention,
    });
    write_run_manifest(&a.out, "infer", config, None, started, &outputs)?;
    Ok(())
}

fn norm_scale_for(ck: &Checkpoint) -> f32 {
    ck.meta.norm_scale
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let started = now_unix();
    let ds = Dataset::load(&a.data)?;
    let values: Vec<f64> = if a.values.trim().is_empty() {
        Vec::new()
    } else {
        a.values
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| Error::Config {
                    field: "values",
                    reason: format!("bad condition value {v}"),
                })
            })
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(Error::Config {
            field: "values",
            reason: "at least one sweep value is required".into(),
        });
    }
    let kind = match a.sweep.as_str() {
        "mask" => {
            let scheme = match a.scheme.as_str() {
                "uniform" => MaskScheme::Uniform,
                "random" => MaskScheme::Random,
                other => {
                    return Err(Error::Config {
                        field: "scheme",
                        reason: format!("unknown scheme {other}"),
                    })
                }
            };
            SweepKind::Mask(scheme)
        }
        "dose" => SweepKind::Dose,
        other => {
            return Err(Error::Config {
                field: "sweep",
                reason: format!("unknown sweep axis {other}"),
            })
        }
    };

    let load_ckpt = |path: &Option<PathBuf>, expect: Task| -> Result<Option<Checkpoint>, Error> {
        let Some(p) = path else { return Ok(None) };
        match load_checkpoint(p) {
            Ok(ck) => {
                if ck.meta.train_config.task != expect {
                    eprintln!(
                        "warning: {} is a {:?} checkpoint, expected {:?}; skipped",
                        p.display(),
                        ck.meta.train_config.task,
                        expect
                    );
                    return Ok(None);
                }
                if ck.meta.dataset_sha256 != ds.manifest.data_sha256 && !a.allow_mismatch {
                    return Err(Error::Integrity(format!(
                        "checkpoint {} was trained on a different dataset (use --allow-mismatch to override)",
                        p.display()
                    )));
                }
                Ok(Some(ck))
            }
            Err(e) => {
                eprintln!("warning: could not load {}: {e}; skipped", p.display());
                Ok(None)
            }
        }
    };
    let msm = load_ckpt(&a.ckpt_msm, Task::Msm)?;
    let svtx = load_ckpt(&a.ckpt_svtx, Task::Svtx)?;
    let dntx = load_ckpt(&a.ckpt_dntx, Task::Dntx)?;
    let ctx = load_ckpt(&a.ckpt_ctx, Task::Ctx)?;

    let n = a.limit.unwrap_or(ds.n_eval()).min(ds.n_eval());
    let images: Vec<_> = (0..n).map(|i| ds.eval_image(i)).collect();
    let sinos: Vec<_> = (0..n).map(|i| ds.eval_sino(i)).collect();
    let samples: Vec<(&Sinogram, &[f32])> = sinos
        .iter()
        .zip(&images)
        .map(|(s, im)| (s, im.values.as_slice()))
        .collect();
    let norm = ds.manifest.norm_scale;

    let mut methods: Vec<Method> = vec![Method {
        label: "iradon".into(),
        recon: Box::new(|m: &MaskedSinogram| Ok(fbp(&m.sinogram, FbpFilter::RamLak)?.clamped())),
    }];
    fn inpaint_method<'a>(label: &str, ck: &'a Checkpoint) -> Method<'a> {
        Method {
            label: label.to_string(),
            recon: Box::new(move |m: &MaskedSinogram| {
                let pred = ck.restore_sino(m)?;
                Ok(fbp(&pred, FbpFilter::RamLak)?.clamped())
            }),
        }
    }
    if let Some(ck) = &msm {
        methods.push(inpaint_method("msm+iradon", ck));
    }
    if let Some(ck) = &svtx {
        methods.push(inpaint_method("svtx+iradon", ck));
    }
    if let Some(ck) = &dntx {
        methods.push(inpaint_method("dntx+iradon", ck));
    }
    if let Some(ck) = &ctx {
        let model = &ck.model;
        methods.push(Method {
            label: "ctx".into(),
            recon: Box::new(move |m: &MaskedSinogram| model.infer_image(m, norm)),
        });
    }

    let input = SweepInput {
        samples,
        side: ds.side(),
        kind,
        conditions: values.clone(),
        phys_scale: ds.manifest.phys_scale,
        incident_flux: a.flux,
        base_seed: a.seed,
    };
    let (table, reports) = sweep(&input, &methods)?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut outputs = Vec::new();
    for (name, cells) in [("sweep_ssim.csv", &table.ssim_cells), ("sweep_psnr.csv", &table.psnr_cells)] {
        let path = a.out.join(name);
        fs::write(&path, table_csv(&table, cells)).map_err(|e| Error::io(&path, e))?;
        outputs.push(path);
    }
    let per_sample = a.out.join("per_sample.csv");
    let mut csv = String::from("method,condition,sample,ssim,psnr\n");
    for r in &reports {
        for (i, (s, p)) in r.ssim.iter().zip(&r.psnr).enumerate() {
            csv.push_str(&format!("{},{},{},{:.6},{:.4}\n", r.method, r.condition, i, s, p));
        }
    }
    fs::write(&per_sample, csv).map_err(|e| Error::io(&per_sample, e))?;
    outputs.push(per_sample);

    write_triptychs(&a.out, &ds, &input, &methods, &mut outputs)?;
    write_run_manifest(
        &a.out,
        "eval",
        serde_json::json!({
            "sweep": a.sweep, "values": values, "scheme": a.scheme,
            "limit": n, "seed": a.seed,
        }),
        Some(ds.manifest.data_sha256.clone()),
        started,
        &outputs,
    )?;
    println!("{}", table_csv(&table, &table.ssim_cells));
    Ok(())
}

fn table_csv(table: &SweepTable, cells: &[Vec<Result<f64, String>>]) -> String {
    let mut s = String::from("method");
    for c in &table.conditions {
        s.push_str(&format!(",{c}"));
    }
    s.push('\n');
    for (mi, label) in table.methods.iter().enumerate() {
        s.push_str(label);
        for cell in &cells[mi] {
            match cell {
                Ok(v) => s.push_str(&format!(",{v:.6}")),
                Err(e) => s.push_str(&format!(",ERROR:{}", e.replace([',', '\n'], " "))),
            }
        }
        s.push('\n');
    }
    s
}

/// R1 degraded-view reconstruction / R2 method output / R3 ground truth,
/// side by side, for the first few eval samples at each condition.
fn write_triptychs(
    out: &Path,
    ds: &Dataset,
    input: &SweepInput,
    methods: &[Method],
    outputs: &mut Vec<PathBuf>,
) -> Result<(), Error> {
    let side = ds.side();
    let n_show = input.samples.len().min(3);
    for (ci, &cond) in input.conditions.iter().enumerate() {
        for si in 0..n_show {
            let (sino, truth) = &input.samples[si];
            let seed = sinoct::metrics::cell_seed(input.base_seed, ci, si);
            let degraded = match input.kind {
                SweepKind::Mask(scheme) => apply_mask(
                    sino,
                    &MaskSpec {
                        scheme,
                        ratio: cond as f32,
                        rng_seed: seed,
                    },
                )?,
                SweepKind::Dose => {
                    let noisy = apply_dose(
                        sino,
                        &DoseModel {
                            incident_flux: input.incident_flux,
                            dose_fraction: cond,
                            rng_seed: seed,
                        },
                        input.phys_scale,
                    )?;
                    MaskedSinogram {
                        kept_indices: (0..sino.grid.n_angles).collect(),
                        sinogram: noisy,
                    }
                }
            };
            let baseline = clamp_unit(&fbp(&degraded.sinogram, FbpFilter::RamLak)?.values);
            for method in methods.iter().skip(1) {
                let Ok(img) = (method.recon)(&degraded) else {
                    continue;
                };
                let img = clamp_unit(&img);
                let mut strip = vec![0.0f32; side * 3 * side];
                for y in 0..side {
                    strip[y * 3 * side..y * 3 * side + side]
                        .copy_from_slice(&baseline[y * side..(y + 1) * side]);
                    strip[y * 3 * side + side..y * 3 * side + 2 * side]
                        .copy_from_slice(&img[y * side..(y + 1) * side]);
                    strip[y * 3 * side + 2 * side..y * 3 * side + 3 * side]
                        .copy_from_slice(&truth[y * side..(y + 1) * side]);
                }
                let path = out.join(format!(
                    "triptych_{}_c{}_s{}.pgm",
                    method.label.replace('+', "_"),
                    cond,
                    si
                ));
                write_pgm(&path, 3 * side, side, &strip)?;
                outputs.push(path);
            }
        }
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<(), Error> {
    let started = now_unix();
    let ds = Dataset::load(&a.data)?;
    let base = load_checkpoint(&a.base)?;
    let model_cfg = ModelConfig {
        token_dim: ds.side(),
        d_model: a.model.d_model,
        n_heads: a.model.heads,
        n_enc_layers: a.model.enc_layers,
        n_dec_layers: a.model.dec_layers,
        d_ff: a.model.d_ff,
        max_angles: ds.manifest.grid.n_angles,
        head_kind: HeadKind::ImagePatchDecoder,
        patch_side: a.model.patch_side,
    };
    let cfg = TrainConfig {
        task: Task::Ctx,
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        mask_ratio: a.mask_ratio,
        mask_ratio_min: a.mask_ratio_min,
        dose_fraction: 1.0,
        incident_flux: 1e4,
        val_fraction: 0.1,
        seed: a.seed,
        freeze_encoder: true,
        base_checkpoint: Some(a.base.clone()),
    };
    let cmp = compare_convergence(&ds, &base, &model_cfg, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let ft = a.out.join("convergence_finetune.csv");
    let rt = a.out.join("convergence_retrain.csv");
    fs::write(&ft, cmp.finetune.log.to_csv()).map_err(|e| Error::io(&ft, e))?;
    fs::write(&rt, cmp.retrain.log.to_csv()).map_err(|e| Error::io(&rt, e))?;
    let report = a.out.join("crossing.json");
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "crossing_epoch": cmp.crossing_epoch,
        "retrain_final_val": cmp.retrain.log.final_val(),
        "finetune_final_val": cmp.finetune.log.final_val(),
        "epochs": a.epochs,
    }))
    .unwrap();
    fs::write(&report, text).map_err(|e| Error::io(&report, e))?;
    write_run_manifest(
        &a.out,
        "compare-convergence",
        serde_json::json!({"epochs": a.epochs, "mask_ratio": a.mask_ratio, "seed": a.seed}),
        Some(ds.manifest.data_sha256.clone()),
        started,
        &[ft, rt, report],
    )?;
    match cmp.crossing_epoch {
        Some(e) => println!("fine-tune reached retrain's final val loss at epoch {e}/{}", a.epochs),
        None => println!("fine-tune did not reach retrain's final val loss in {} epochs", a.epochs),
    }
    Ok(())
}
