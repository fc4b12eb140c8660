//! Training loops for the masked-sinogram pretext task and the downstream
//! heads, checkpoint save/load, and the fine-tune-vs-retrain comparison.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctgeom::{apply_dose, apply_mask, DoseModel, MaskSpec, MaskedSinogram};
use crate::dataset::Dataset;
use crate::diffcore::{adam_step, AdamState, Graph, ParamId, Tensor};
use crate::error::{Error, Result};
use crate::model::{image_to_patches, visible_rows, HeadKind, Model, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Msm,
    Svtx,
    Dntx,
    Ctx,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msm" => Ok(Task::Msm),
            "svtx" => Ok(Task::Svtx),
            "dntx" => Ok(Task::Dntx),
            "ctx" => Ok(Task::Ctx),
            other => Err(Error::Config {
                field: "task",
                reason: format!("unknown task {other}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub mask_ratio: f32,
    /// When set below `mask_ratio`, masked training draws each sample's
    /// ratio uniformly from [mask_ratio_min, mask_ratio], so the model
    /// sees a spread of visible-context sizes instead of one.
    #[serde(default)]
    pub mask_ratio_min: Option<f32>,
    pub dose_fraction: f64,
    pub incident_flux: f64,
    pub val_fraction: f32,
    pub seed: u64,
    pub freeze_encoder: bool,
    pub base_checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(task: Task) -> Self {
        TrainConfig {
            task,
            epochs: 40,
            batch_size: 16,
            lr: 1e-3,
            mask_ratio: 0.8,
            mask_ratio_min: None,
            dose_fraction: 1.0 / 200.0,
            incident_flux: 1e4,
            val_fraction: 0.1,
            seed: 0,
            freeze_encoder: task == Task::Ctx,
            base_checkpoint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::Config {
                field: "val_fraction",
                reason: format!("must be in (0, 0.5], got {}", self.val_fraction),
            });
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config {
                field: "epochs",
                reason: "epochs and batch_size must be >= 1".into(),
            });
        }
        if self.task == Task::Ctx && self.freeze_encoder && self.base_checkpoint.is_none() {
            return Err(Error::Config {
                field: "base_checkpoint",
                reason: "frozen-encoder ctx training requires a base MSM checkpoint".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub records: Vec<EpochRecord>,
}

impl ConvergenceLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,wall_secs\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.8e},{:.8e},{:.3}\n",
                r.epoch, r.train_loss, r.val_loss, r.wall_secs
            ));
        }
        s
    }

    pub fn final_val(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_loss)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub dataset_sha256: String,
    /// Sinogram normalization scale of the training dataset, carried so
    /// inference on standalone inputs can denormalize consistently.
    pub norm_scale: f32,
    pub param_names: Vec<String>,
}

pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Task-appropriate sinogram restoration: inpainting heads copy the
    /// exactly-measured visible rows through and only fill masked rows from
    /// the model; the denoising head replaces every row, since its visible
    /// rows are themselves noisy.
    pub fn restore_sino(&self, masked: &MaskedSinogram) -> Result<crate::ctgeom::Sinogram> {
        match self.meta.train_config.task {
            Task::Dntx => self.model.infer_sino(masked, self.meta.norm_scale),
            _ => self.model.inpaint_sino(masked, self.meta.norm_scale),
        }
    }
}

pub fn save_checkpoint(dir: &Path, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir).map_err(|e| Error::io(&params_dir, e))?;
    for (_, p) in model.store.iter() {
        let path = params_dir.join(format!("{}.tc", p.name));
        crate::container::Container::new(p.value.shape.clone(), p.value.data.clone())?
            .save(&path)?;
    }
    let meta_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join("manifest.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    let mut model = Model::init(meta.model_config, 0)?;
    if meta.param_names.len() != model.store.len() {
        return Err(Error::Integrity(format!(
            "checkpoint has {} parameters, model expects {}",
            meta.param_names.len(),
            model.store.len()
        )));
    }
    for name in &meta.param_names {
        let id = model
            .store
            .find(name)
            .ok_or_else(|| Error::Integrity(format!("unexpected parameter {name}")))?;
        let c = crate::container::Container::load(&dir.join("params").join(format!("{name}.tc")))?;
        let slot = model.store.value_mut(id);
        if slot.shape != c.shape {
            return Err(Error::Integrity(format!(
                "parameter {name}: shape {:?} does not match model {:?}",
                c.shape, slot.shape
            )));
        }
        slot.data = c.data;
    }
    Ok(Checkpoint { model, meta })
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: ConvergenceLog,
    /// Validation loss of the untrained model, for before/after checks.
    pub baseline_val_loss: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub meta: CheckpointMeta,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(a.wrapping_mul(0xD1B54A32D192ED03))
        .wrapping_add(b.wrapping_mul(0x8CB92BA72F3D8DD7));
    z = (z ^ (z >> 29)).wrapping_mul(0xBF58476D1CE4E5B9);
    z ^ (z >> 32)
}

const VAL_STREAM: u64 = 0xDEAD_BEEF;

/// Degraded input for one sample at one epoch. Masks and noise are resampled
/// per epoch for the random tasks; the uniform scheme varies only through
/// the optional per-sample ratio draw.
fn degrade(
    ds: &Dataset,
    cfg: &TrainConfig,
    sample: usize,
    stream: u64,
) -> Result<MaskedSinogram> {
    let sino = ds.train_sino(sample);
    match cfg.task {
        Task::Msm | Task::Ctx => {
            let seed = mix(cfg.seed, stream, sample as u64);
            let ratio = match cfg.mask_ratio_min {
                Some(lo) if lo < cfg.mask_ratio => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A);
                    rng.gen_range(lo..=cfg.mask_ratio)
                }
                _ => cfg.mask_ratio,
            };
            apply_mask(&sino, &MaskSpec::random(ratio, seed))
        }
        Task::Svtx => {
            let ratio = match cfg.mask_ratio_min {
                Some(lo) if lo < cfg.mask_ratio => {
                    let seed = mix(cfg.seed, stream, sample as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A);
                    rng.gen_range(lo..=cfg.mask_ratio)
                }
                _ => cfg.mask_ratio,
            };
            apply_mask(&sino, &MaskSpec::uniform(ratio))
        }
        Task::Dntx => {
            let dose = DoseModel {
                incident_flux: cfg.incident_flux,
                dose_fraction: cfg.dose_fraction,
                rng_seed: mix(cfg.seed, stream, sample as u64),
            };
            let noisy = apply_dose(&sino, &dose, ds.manifest.phys_scale)?;
            let all: Vec<usize> = (0..sino.grid.n_angles).collect();
            Ok(MaskedSinogram {
                sinogram: noisy,
                kept_indices: all,
            })
        }
    }
}

/// Target tensor in model units: the clean sinogram for the sinogram heads,
/// the phantom as a patch sequence for the image head.
fn target_tensor(ds: &Dataset, model_cfg: &ModelConfig, task: Task, sample: usize) -> Result<Tensor> {
    match task {
        Task::Ctx => {
            let img = ds.train_image(sample);
            let patches = image_to_patches(&img.values, img.side, model_cfg.patch_side);
            Tensor::new(
                vec![model_cfg.n_patches(), model_cfg.patch_side * model_cfg.patch_side],
                patches,
            )
        }
        _ => {
            let sino = ds.train_sino(sample);
            let scale = ds.manifest.norm_scale;
            Tensor::new(
                vec![sino.grid.n_angles, sino.n_bins],
                sino.values.iter().map(|v| v / scale).collect(),
            )
        }
    }
}

fn sample_loss(
    model: &mut Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    sample: usize,
    stream: u64,
    train: bool,
) -> Result<f64> {
    let masked = degrade(ds, cfg, sample, stream)?;
    let rows = visible_rows(&masked, ds.manifest.norm_scale)?;
    let target = target_tensor(ds, &model.config, cfg.task, sample)?;
    let mut g = Graph::new();
    let pred = model.forward(
        &mut g,
        &rows,
        &masked.kept_indices,
        masked.sinogram.grid.n_angles,
        None,
    )?;
    let t = g.input(&target)?;
    let loss = g.mse_loss(pred, t)?;
    let value = g.data(loss)[0] as f64;
    if train {
        // Per-sample gradients accumulate in the store; the batch loop
        // rescales them before the optimizer step.
        g.backward(loss, &mut model.store)?;
    }
    Ok(value)
}

fn validation_loss(model: &mut Model, ds: &Dataset, cfg: &TrainConfig, val: &[usize]) -> Result<f64> {
    let mut acc = 0.0;
    for &s in val {
        acc += sample_loss(model, ds, cfg, s, VAL_STREAM, false)?;
    }
    Ok(acc / val.len() as f64)
}

/// Core loop shared by every task. `base` seeds the encoder for fine-tuning.
pub fn train(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    base: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let expected_head = match cfg.task {
        Task::Ctx => HeadKind::ImagePatchDecoder,
        _ => HeadKind::SinoDecoder,
    };
    if model_cfg.head_kind != expected_head {
        return Err(Error::Contract(format!(
            "task {:?} requires head {:?}",
            cfg.task, expected_head
        )));
    }
    if model_cfg.max_angles < ds.manifest.grid.n_angles {
        return Err(Error::Config {
            field: "max_angles",
            reason: format!(
                "model max_angles {} below dataset angle count {}",
                model_cfg.max_angles, ds.manifest.grid.n_angles
            ),
        });
    }

    let mut model = Model::init(*model_cfg, cfg.seed)?;
    if let Some(ck) = base {
        if ck.meta.dataset_sha256 != ds.manifest.data_sha256 {
            return Err(Error::Integrity(
                "base checkpoint was trained on a different dataset".into(),
            ));
        }
        if ck.meta.model_config.head_kind == model_cfg.head_kind {
            // Same architecture (sinogram-head fine-tuning): warm-start the
            // whole model, decoder included, so masking patterns unseen in
            // fine-tuning stay covered by the pretraining.
            copy_all_params(&ck.model, &mut model)?;
        } else {
            copy_encoder_params(&ck.model, &mut model)?;
        }
    }

    let trainable: Vec<ParamId> = if cfg.freeze_encoder {
        model.decoder_param_ids()
    } else {
        model.all_param_ids()
    };

    let n = ds.n_train();
    let n_val = ((cfg.val_fraction * n as f32).round() as usize).clamp(1, n - 1);
    let train_idx: Vec<usize> = (0..n - n_val).collect();
    let val_idx: Vec<usize> = (n - n_val..n).collect();

    let baseline_val_loss = validation_loss(&mut model, ds, cfg, &val_idx)?;
    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut log = ConvergenceLog::default();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Vec<Vec<f32>> = Vec::new();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        // Cosine decay from the configured rate to 10% of it over the run;
        // the tail-end refinement matters for the inpainting heads, whose
        // reconstructions amplify residual prediction noise.
        let progress = (epoch - 1) as f32 / cfg.epochs.max(1) as f32;
        let floor = 0.1 * cfg.lr;
        adam.lr = floor
            + 0.5 * (cfg.lr - floor) * (1.0 + (std::f32::consts::PI * progress).cos());
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5175FF1E, epoch as u64));
        order.shuffle(&mut rng);
        let mut train_acc = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.store.zero_grads();
            for &s in batch {
                train_acc += sample_loss(&mut model, ds, cfg, s, epoch as u64, true)?;
            }
            model.store.scale_grads(1.0 / batch.len() as f32);
            adam_step(&mut model.store, &mut adam, &trainable)?;
        }
        let train_loss = train_acc / order.len() as f64;
        let val_loss = validation_loss(&mut model, ds, cfg, &val_idx)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = model.store.iter().map(|(_, p)| p.value.data.clone()).collect();
        }
        log.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }

    // Restore the best-validation parameters.
    if !best_params.is_empty() {
        let ids: Vec<ParamId> = model.all_param_ids();
        for (id, data) in ids.into_iter().zip(best_params) {
            model.store.value_mut(id).data = data;
        }
    }

    let meta = CheckpointMeta {
        model_config: *model_cfg,
        train_config: cfg.clone(),
        epoch: best_epoch,
        best_val_loss: best_val,
        dataset_sha256: ds.manifest.data_sha256.clone(),
        norm_scale: ds.manifest.norm_scale,
        param_names: model.store.iter().map(|(_, p)| p.name.clone()).collect(),
    };
    Ok(TrainOutcome {
        model,
        log,
        baseline_val_loss,
        best_val_loss: best_val,
        best_epoch,
        meta,
    })
}

fn copy_all_params(from: &Model, to: &mut Model) -> Result<()> {
    for (id, p) in from.store.iter() {
        let name = p.name.clone();
        let src = from.store.value(id).clone();
        let dst_id = to
            .store
            .find(&name)
            .ok_or_else(|| Error::Integrity(format!("parameter {name} missing in target")))?;
        let dst = to.store.value_mut(dst_id);
        if dst.shape != src.shape {
            return Err(Error::Integrity(format!(
                "parameter {name}: shape mismatch {:?} vs {:?}",
                src.shape, dst.shape
            )));
        }
        *dst = src;
    }
    Ok(())
}

fn copy_encoder_params(from: &Model, to: &mut Model) -> Result<()> {
    for id in from.encoder_param_ids() {
        let name = from.store.name(id).to_string();
        let src = from.store.value(id).clone();
        let dst_id = to
            .store
            .find(&name)
            .ok_or_else(|| Error::Integrity(format!("encoder parameter {name} missing in target")))?;
        let dst = to.store.value_mut(dst_id);
        if dst.shape != src.shape {
            return Err(Error::Integrity(format!(
                "encoder parameter {name}: shape mismatch {:?} vs {:?}",
                src.shape, dst.shape
            )));
        }
        *dst = src;
    }
    Ok(())
}

pub fn pretrain_msm(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train(ds, model_cfg, cfg, None)
}

pub fn train_svtx(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    base: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    train(ds, model_cfg, cfg, base)
}

pub fn train_dntx(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    base: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    train(ds, model_cfg, cfg, base)
}

pub fn finetune_ctx(
    ds: &Dataset,
    base: &Checkpoint,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if base.meta.model_config.head_kind != HeadKind::SinoDecoder {
        return Err(Error::Contract(
            "ctx fine-tuning requires a sinogram-head (MSM) base checkpoint".into(),
        ));
    }
    train(ds, model_cfg, cfg, Some(base))
}

pub struct ConvergenceComparison {
    pub finetune: TrainOutcome,
    pub retrain: TrainOutcome,
    /// First epoch at which the fine-tune validation loss reaches the
    /// retrain run's final validation loss, if it ever does.
    pub crossing_epoch: Option<usize>,
}

/// Run C-Tx twice with identical seeds/config except the freeze mode and
/// report where the fine-tune curve crosses the retrain final loss.
pub fn compare_convergence(
    ds: &Dataset,
    base: &Checkpoint,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<ConvergenceComparison> {
    let mut ft_cfg = cfg.clone();
    ft_cfg.freeze_encoder = true;
    let finetune = finetune_ctx(ds, base, model_cfg, &ft_cfg)?;
    let mut rt_cfg = cfg.clone();
    rt_cfg.freeze_encoder = false;
    rt_cfg.base_checkpoint = None;
    let retrain = train(ds, model_cfg, &rt_cfg, None)?;
    let crossing_epoch = retrain.log.final_val().and_then(|final_val| {
        finetune
            .log
            .records
            .iter()
            .find(|r| r.val_loss <= final_val)
            .map(|r| r.epoch)
    });
    Ok(ConvergenceComparison {
        finetune,
        retrain,
        crossing_epoch,
    })
}
