//! Masked sinogram transformer: projections-as-tokens embedding, pre-norm
//! encoder applied to visible views only, mask-token decoder that in-paints
//! the full sinogram, and an image-patch head for direct reconstruction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctgeom::{MaskedSinogram, Sinogram};
use crate::diffcore::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    SinoDecoder,
    ImagePatchDecoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Detector bins per projection; equals the image side.
    pub token_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_angles: usize,
    pub head_kind: HeadKind,
    /// Image-patch head only.
    pub patch_side: usize,
}

impl ModelConfig {
    /// Trains in minutes on one CPU while exercising every mechanism.
    pub fn desk_scale() -> Self {
        ModelConfig {
            token_dim: 64,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 128,
            max_angles: 60,
            head_kind: HeadKind::SinoDecoder,
            patch_side: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config {
                field: "d_model",
                reason: format!(
                    "d_model {} must be a positive multiple of n_heads {}",
                    self.d_model, self.n_heads
                ),
            });
        }
        if self.max_angles == 0 {
            return Err(Error::Config {
                field: "max_angles",
                reason: "must be >= 1".into(),
            });
        }
        if self.head_kind == HeadKind::ImagePatchDecoder {
            if self.patch_side == 0 || self.token_dim % self.patch_side != 0 {
                return Err(Error::Config {
                    field: "patch_side",
                    reason: format!(
                        "patch_side {} must divide image side {}",
                        self.patch_side, self.token_dim
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn image_side(&self) -> usize {
        self.token_dim
    }

    pub fn patches_per_axis(&self) -> usize {
        self.token_dim / self.patch_side
    }

    pub fn n_patches(&self) -> usize {
        self.patches_per_axis() * self.patches_per_axis()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Encoder,
    Decoder,
}

/// Post-softmax weights captured during one forward pass.
#[derive(Debug, Clone)]
pub struct AttnRecord {
    pub stage: Stage,
    pub layer: usize,
    pub head: usize,
    pub weights: Tensor,
}

#[derive(Debug, Default)]
pub struct AttnTrace(pub Vec<AttnRecord>);

#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    /// query-length x key-length, rows sum to 1.
    pub weights: Tensor,
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;

        let linear = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f32).sqrt();
            let w: Vec<f32> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            store.add(format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], w).unwrap());
            store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out]));
        };
        let normal = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f32> {
            (0..n)
                .map(|_| {
                    // Box-Muller, fixed draw order for determinism.
                    let u1: f32 = rng.gen_range(1e-7f32..1.0);
                    let u2: f32 = rng.gen_range(0.0f32..1.0);
                    0.02 * (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
                })
                .collect()
        };
        let ln = |store: &mut ParamStore, name: &str, n: usize| {
            store.add(format!("{name}.g"), Tensor::new(vec![n], vec![1.0; n]).unwrap());
            store.add(format!("{name}.b"), Tensor::zeros(vec![n]));
        };
        let block = |store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cross: bool| {
            let d = c.d_model;
            ln(store, &format!("{prefix}.ln1"), d);
            for p in ["q", "k", "v", "o"] {
                let bound = 1.0 / (d as f32).sqrt();
                let w: Vec<f32> = (0..d * d).map(|_| rng.gen_range(-bound..bound)).collect();
                store.add(
                    format!("{prefix}.attn.w{p}"),
                    Tensor::new(vec![d, d], w).unwrap(),
                );
                store.add(format!("{prefix}.attn.b{p}"), Tensor::zeros(vec![d]));
            }
            if cross {
                ln(store, &format!("{prefix}.lnx"), d);
                for p in ["q", "k", "v", "o"] {
                    let bound = 1.0 / (d as f32).sqrt();
                    let w: Vec<f32> = (0..d * d).map(|_| rng.gen_range(-bound..bound)).collect();
                    store.add(
                        format!("{prefix}.xattn.w{p}"),
                        Tensor::new(vec![d, d], w).unwrap(),
                    );
                    store.add(format!("{prefix}.xattn.b{p}"), Tensor::zeros(vec![d]));
                }
            }
            ln(store, &format!("{prefix}.ln2"), d);
            let bound1 = 1.0 / (d as f32).sqrt();
            let w1: Vec<f32> = (0..d * c.d_ff).map(|_| rng.gen_range(-bound1..bound1)).collect();
            store.add(format!("{prefix}.ff.w1"), Tensor::new(vec![d, c.d_ff], w1).unwrap());
            store.add(format!("{prefix}.ff.b1"), Tensor::zeros(vec![c.d_ff]));
            let bound2 = 1.0 / (c.d_ff as f32).sqrt();
            let w2: Vec<f32> = (0..c.d_ff * d).map(|_| rng.gen_range(-bound2..bound2)).collect();
            store.add(format!("{prefix}.ff.w2"), Tensor::new(vec![c.d_ff, d], w2).unwrap());
            store.add(format!("{prefix}.ff.b2"), Tensor::zeros(vec![d]));
        };

        linear(&mut store, &mut rng, "embed", c.token_dim, c.d_model);
        let pos = normal(&mut rng, c.max_angles * c.d_model);
        store.add("pos", Tensor::new(vec![c.max_angles, c.d_model], pos).unwrap());
        for l in 0..c.n_enc_layers {
            block(&mut store, &mut rng, &format!("enc.{l}"), false);
        }
        ln(&mut store, "enc.ln_f", c.d_model);

        let mask_tok = normal(&mut rng, c.d_model);
        store.add("mask_token", Tensor::new(vec![1, c.d_model], mask_tok).unwrap());

        match c.head_kind {
            HeadKind::SinoDecoder => {
                for l in 0..c.n_dec_layers {
                    block(&mut store, &mut rng, &format!("dec.{l}"), false);
                }
                ln(&mut store, "dec.ln_f", c.d_model);
                linear(&mut store, &mut rng, "out", c.d_model, c.token_dim);
            }
            HeadKind::ImagePatchDecoder => {
                let pq = normal(&mut rng, c.n_patches() * c.d_model);
                store.add(
                    "patch_queries",
                    Tensor::new(vec![c.n_patches(), c.d_model], pq).unwrap(),
                );
                for l in 0..c.n_dec_layers {
                    block(&mut store, &mut rng, &format!("idec.{l}"), true);
                }
                ln(&mut store, "idec.ln_f", c.d_model);
                linear(
                    &mut store,
                    &mut rng,
                    "iout",
                    c.d_model,
                    c.patch_side * c.patch_side,
                );
            }
        }
        Ok(Model { config, store })
    }

    fn id(&self, name: &str) -> Result<ParamId> {
        self.store
            .find(name)
            .ok_or_else(|| Error::Integrity(format!("missing parameter {name}")))
    }

    pub fn all_param_ids(&self) -> Vec<ParamId> {
        self.store.iter().map(|(id, _)| id).collect()
    }

    /// Parameters owned by the embedding + encoder stack (the part frozen
    /// during downstream fine-tuning).
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| {
                p.name.starts_with("embed.") || p.name == "pos" || p.name.starts_with("enc.")
            })
            .map(|(id, _)| id)
            .collect()
    }

    pub fn decoder_param_ids(&self) -> Vec<ParamId> {
        let enc: std::collections::HashSet<usize> =
            self.encoder_param_ids().iter().map(|p| p.0).collect();
        self.store
            .iter()
            .filter(|(id, _)| !enc.contains(&id.0))
            .map(|(id, _)| id)
            .collect()
    }

    fn mha(
        &self,
        g: &mut Graph,
        prefix: &str,
        x_q: NodeId,
        x_kv: NodeId,
        trace: &mut Option<&mut AttnTrace>,
        stage: Stage,
        layer: usize,
    ) -> Result<NodeId> {
        let d = self.config.d_model;
        let h = self.config.n_heads;
        let dh = d / h;
        let (wq, bq) = (g.leaf(&self.store, self.id(&format!("{prefix}.wq"))?)?, g.leaf(&self.store, self.id(&format!("{prefix}.bq"))?)?);
        let (wk, bk) = (g.leaf(&self.store, self.id(&format!("{prefix}.wk"))?)?, g.leaf(&self.store, self.id(&format!("{prefix}.bk"))?)?);
        let (wv, bv) = (g.leaf(&self.store, self.id(&format!("{prefix}.wv"))?)?, g.leaf(&self.store, self.id(&format!("{prefix}.bv"))?)?);
        let (wo, bo) = (g.leaf(&self.store, self.id(&format!("{prefix}.wo"))?)?, g.leaf(&self.store, self.id(&format!("{prefix}.bo"))?)?);
        let q = g.linear(x_q, wq, bq)?;
        let k = g.linear(x_kv, wk, bk)?;
        let v = g.linear(x_kv, wv, bv)?;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut heads = Vec::with_capacity(h);
        for hi in 0..h {
            let qh = g.slice_cols(q, hi * dh, dh)?;
            let kh = g.slice_cols(k, hi * dh, dh)?;
            let vh = g.slice_cols(v, hi * dh, dh)?;
            let kt = g.transpose(kh)?;
            let logits = g.matmul(qh, kt)?;
            let scaled = g.scale(logits, scale)?;
            let attn = g.softmax_lastdim(scaled)?;
            if let Some(t) = trace.as_deref_mut() {
                t.0.push(AttnRecord {
                    stage,
                    layer,
                    head: hi,
                    weights: g.tensor(attn),
                });
            }
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        g.linear(cat, wo, bo)
    }

    fn ln(&self, g: &mut Graph, prefix: &str, x: NodeId) -> Result<NodeId> {
        let gain = g.leaf(&self.store, self.id(&format!("{prefix}.g"))?)?;
        let bias = g.leaf(&self.store, self.id(&format!("{prefix}.b"))?)?;
        g.layer_norm(x, gain, bias)
    }

    fn ff(&self, g: &mut Graph, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w1 = g.leaf(&self.store, self.id(&format!("{prefix}.w1"))?)?;
        let b1 = g.leaf(&self.store, self.id(&format!("{prefix}.b1"))?)?;
        let w2 = g.leaf(&self.store, self.id(&format!("{prefix}.w2"))?)?;
        let b2 = g.leaf(&self.store, self.id(&format!("{prefix}.b2"))?)?;
        let h = g.linear(x, w1, b1)?;
        let h = g.gelu(h)?;
        g.linear(h, w2, b2)
    }

    /// One pre-norm block: x + attn(ln1(x)), then x + ff(ln2(x)).
    fn self_block(
        &self,
        g: &mut Graph,
        prefix: &str,
        x: NodeId,
        trace: &mut Option<&mut AttnTrace>,
        stage: Stage,
        layer: usize,
    ) -> Result<NodeId> {
        let normed = self.ln(g, &format!("{prefix}.ln1"), x)?;
        let attn = self.mha(g, &format!("{prefix}.attn"), normed, normed, trace, stage, layer)?;
        let x = g.add(x, attn)?;
        let normed = self.ln(g, &format!("{prefix}.ln2"), x)?;
        let ff = self.ff(g, &format!("{prefix}.ff"), normed)?;
        g.add(x, ff)
    }

    /// Project visible projection rows to d_model and add the positional
    /// embedding of their absolute angle index.
    pub fn embed(&self, g: &mut Graph, rows: &Tensor, angle_ids: &[usize]) -> Result<NodeId> {
        let (k, width) = rows.dims2()?;
        if width != self.config.token_dim {
            return Err(Error::Shape {
                op: "embed",
                lhs: vec![k, width],
                rhs: vec![k, self.config.token_dim],
            });
        }
        if angle_ids.len() != k {
            return Err(Error::Contract(format!(
                "embed: {k} rows but {} angle ids",
                angle_ids.len()
            )));
        }
        if angle_ids.iter().any(|&a| a >= self.config.max_angles) {
            return Err(Error::Contract("angle id beyond max_angles".into()));
        }
        let x = g.input(rows)?;
        let w = g.leaf(&self.store, self.id("embed.w")?)?;
        let b = g.leaf(&self.store, self.id("embed.b")?)?;
        let proj = g.linear(x, w, b)?;
        let pos = g.leaf(&self.store, self.id("pos")?)?;
        let pos_rows = g.gather_rows(pos, angle_ids)?;
        g.add(proj, pos_rows)
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        tokens: NodeId,
        trace: &mut Option<&mut AttnTrace>,
    ) -> Result<NodeId> {
        let mut x = tokens;
        for l in 0..self.config.n_enc_layers {
            x = self.self_block(g, &format!("enc.{l}"), x, trace, Stage::Encoder, l)?;
        }
        self.ln(g, "enc.ln_f", x)
    }

    /// Fill masked slots with the learned mask token, add positional
    /// embeddings to every slot, run the decoder stack, and map each token
    /// back to detector pixels.
    pub fn decode_sino(
        &self,
        g: &mut Graph,
        encoded: NodeId,
        kept_indices: &[usize],
        total_angles: usize,
        trace: &mut Option<&mut AttnTrace>,
    ) -> Result<NodeId> {
        if self.config.head_kind != HeadKind::SinoDecoder {
            return Err(Error::Contract("model has no sinogram decoder head".into()));
        }
        if kept_indices.iter().any(|&i| i >= total_angles) {
            return Err(Error::Contract("kept index beyond total_angles".into()));
        }
        let full = self.assemble_full_sequence(g, encoded, kept_indices, total_angles)?;
        let mut x = full;
        for l in 0..self.config.n_dec_layers {
            x = self.self_block(g, &format!("dec.{l}"), x, trace, Stage::Decoder, l)?;
        }
        let x = self.ln(g, "dec.ln_f", x)?;
        let w = g.leaf(&self.store, self.id("out.w")?)?;
        let b = g.leaf(&self.store, self.id("out.b")?)?;
        g.linear(x, w, b)
    }

    fn assemble_full_sequence(
        &self,
        g: &mut Graph,
        encoded: NodeId,
        kept_indices: &[usize],
        total_angles: usize,
    ) -> Result<NodeId> {
        let mask_tok = g.leaf(&self.store, self.id("mask_token")?)?;
        let base = g.repeat_row(mask_tok, total_angles)?;
        let full = g.row_scatter(base, encoded, kept_indices)?;
        let pos = g.leaf(&self.store, self.id("pos")?)?;
        let all: Vec<usize> = (0..total_angles).collect();
        let pos_rows = g.gather_rows(pos, &all)?;
        g.add(full, pos_rows)
    }

    /// Image-patch head: learned patch-position queries self-attend and
    /// cross-attend over the full (encoded + mask token) sequence, emitting
    /// one patch_side^2 pixel vector per patch.
    pub fn decode_image(
        &self,
        g: &mut Graph,
        encoded: NodeId,
        kept_indices: &[usize],
        total_angles: usize,
        trace: &mut Option<&mut AttnTrace>,
    ) -> Result<NodeId> {
        if self.config.head_kind != HeadKind::ImagePatchDecoder {
            return Err(Error::Contract("model has no image-patch head".into()));
        }
        let memory = self.assemble_full_sequence(g, encoded, kept_indices, total_angles)?;
        let pq = g.leaf(&self.store, self.id("patch_queries")?)?;
        let mut x = pq;
        for l in 0..self.config.n_dec_layers {
            let prefix = format!("idec.{l}");
            let normed = self.ln(g, &format!("{prefix}.ln1"), x)?;
            let attn = self.mha(g, &format!("{prefix}.attn"), normed, normed, trace, Stage::Decoder, l)?;
            x = g.add(x, attn)?;
            let normed = self.ln(g, &format!("{prefix}.lnx"), x)?;
            let xattn = self.mha(g, &format!("{prefix}.xattn"), normed, memory, trace, Stage::Decoder, l)?;
            x = g.add(x, xattn)?;
            let normed = self.ln(g, &format!("{prefix}.ln2"), x)?;
            let ff = self.ff(g, &format!("{prefix}.ff"), normed)?;
            x = g.add(x, ff)?;
        }
        let x = self.ln(g, "idec.ln_f", x)?;
        let w = g.leaf(&self.store, self.id("iout.w")?)?;
        let b = g.leaf(&self.store, self.id("iout.b")?)?;
        g.linear(x, w, b)
    }

    /// End-to-end forward from visible rows. Returns the prediction node:
    /// total_angles x token_dim for the sinogram head, n_patches x
    /// patch_side^2 for the image head.
    pub fn forward(
        &self,
        g: &mut Graph,
        visible_rows: &Tensor,
        angle_ids: &[usize],
        total_angles: usize,
        mut trace: Option<&mut AttnTrace>,
    ) -> Result<NodeId> {
        let tokens = self.embed(g, visible_rows, angle_ids)?;
        let encoded = self.encode(g, tokens, &mut trace)?;
        match self.config.head_kind {
            HeadKind::SinoDecoder => {
                self.decode_sino(g, encoded, angle_ids, total_angles, &mut trace)
            }
            HeadKind::ImagePatchDecoder => {
                self.decode_image(g, encoded, angle_ids, total_angles, &mut trace)
            }
        }
    }

    /// Run the decoder on a masked sinogram already normalized to model units.
    pub fn infer_sino(&self, masked: &MaskedSinogram, norm_scale: f32) -> Result<Sinogram> {
        let rows = visible_rows(masked, norm_scale)?;
        let mut g = Graph::new();
        let pred = self.forward(
            &mut g,
            &rows,
            &masked.kept_indices,
            masked.sinogram.grid.n_angles,
            None,
        )?;
        let mut out = masked.sinogram.clone();
        out.values = g.data(pred).iter().map(|v| v * norm_scale).collect();
        Ok(out)
    }

    /// Inpainting variant of [`Model::infer_sino`]: masked rows come from the
    /// model, visible rows are copied through from the measurement, which is
    /// exact for view masking (but wrong for denoising, where the visible
    /// rows are themselves corrupted).
    pub fn inpaint_sino(&self, masked: &MaskedSinogram, norm_scale: f32) -> Result<Sinogram> {
        let mut out = self.infer_sino(masked, norm_scale)?;
        let n_bins = out.n_bins;
        for &k in &masked.kept_indices {
            out.values[k * n_bins..(k + 1) * n_bins]
                .copy_from_slice(masked.sinogram.row(k));
        }
        Ok(out)
    }

    /// Direct reconstruction with the image-patch head.
    pub fn infer_image(&self, masked: &MaskedSinogram, norm_scale: f32) -> Result<Vec<f32>> {
        let rows = visible_rows(masked, norm_scale)?;
        let mut g = Graph::new();
        let pred = self.forward(
            &mut g,
            &rows,
            &masked.kept_indices,
            masked.sinogram.grid.n_angles,
            None,
        )?;
        Ok(patches_to_image(
            g.data(pred),
            self.config.image_side(),
            self.config.patch_side,
        ))
    }

    /// Post-softmax attention weights of one decoder layer/head.
    pub fn extract_attention(
        &self,
        masked: &MaskedSinogram,
        norm_scale: f32,
        layer: usize,
        head: usize,
    ) -> Result<AttentionMap> {
        if layer >= self.config.n_dec_layers || head >= self.config.n_heads {
            return Err(Error::Contract(format!(
                "layer {layer}/head {head} outside config ({} layers, {} heads)",
                self.config.n_dec_layers, self.config.n_heads
            )));
        }
        let mut trace = AttnTrace::default();
        let rows = visible_rows(masked, norm_scale)?;
        let mut g = Graph::new();
        self.forward(
            &mut g,
            &rows,
            &masked.kept_indices,
            masked.sinogram.grid.n_angles,
            Some(&mut trace),
        )?;
        trace
            .0
            .into_iter()
            .find(|r| r.stage == Stage::Decoder && r.layer == layer && r.head == head)
            .map(|r| AttentionMap {
                layer,
                head,
                weights: r.weights,
            })
            .ok_or_else(|| Error::Contract("attention record not captured".into()))
    }
}

/// Extract kept rows of a masked sinogram as a k x token_dim tensor in model
/// units (divided by the dataset-global scale).
pub fn visible_rows(masked: &MaskedSinogram, norm_scale: f32) -> Result<Tensor> {
    if norm_scale <= 0.0 {
        return Err(Error::Config {
            field: "norm_scale",
            reason: "must be > 0".into(),
        });
    }
    let n_bins = masked.sinogram.n_bins;
    let mut data = Vec::with_capacity(masked.kept_indices.len() * n_bins);
    for &i in &masked.kept_indices {
        data.extend(masked.sinogram.row(i).iter().map(|v| v / norm_scale));
    }
    Tensor::new(vec![masked.kept_indices.len(), n_bins], data)
}

/// MSE over the entire sinogram, masked and visible rows alike.
pub fn msm_loss(pred: &Sinogram, target: &Sinogram) -> Result<f64> {
    if pred.values.len() != target.values.len() || pred.n_bins != target.n_bins {
        return Err(Error::Shape {
            op: "msm_loss",
            lhs: vec![pred.grid.n_angles, pred.n_bins],
            rhs: vec![target.grid.n_angles, target.n_bins],
        });
    }
    let n = pred.values.len();
    let sum: f64 = pred
        .values
        .iter()
        .zip(&target.values)
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum();
    Ok(sum / n as f64)
}

/// Row-major patch sequence (top-to-bottom, left-to-right) to image.
pub fn patches_to_image(patches: &[f32], side: usize, patch_side: usize) -> Vec<f32> {
    let per_axis = side / patch_side;
    let pp = patch_side * patch_side;
    let mut img = vec![0.0f32; side * side];
    for pi in 0..per_axis * per_axis {
        let py = pi / per_axis;
        let px = pi % per_axis;
        for dy in 0..patch_side {
            for dx in 0..patch_side {
                img[(py * patch_side + dy) * side + px * patch_side + dx] =
                    patches[pi * pp + dy * patch_side + dx];
            }
        }
    }
    img
}

/// Inverse of [`patches_to_image`].
pub fn image_to_patches(img: &[f32], side: usize, patch_side: usize) -> Vec<f32> {
    let per_axis = side / patch_side;
    let pp = patch_side * patch_side;
    let mut patches = vec![0.0f32; side * side];
    for pi in 0..per_axis * per_axis {
        let py = pi / per_axis;
        let px = pi % per_axis;
        for dy in 0..patch_side {
            for dx in 0..patch_side {
                patches[pi * pp + dy * patch_side + dx] =
                    img[(py * patch_side + dy) * side + px * patch_side + dx];
            }
        }
    }
    patches
}
