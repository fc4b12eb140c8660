//! Dataset generation and loading: phantom images plus their full-view
//! sinograms in the flat tensor-container format, with a JSON manifest that
//! records the generation config, normalization scales and a content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::Container;
use crate::ctgeom::{radon, AngleGrid, Sinogram};
use crate::error::{Error, Result};
use crate::phantom::{generate_phantom, PhantomConfig, PhantomImage};

pub const TRAIN_IMAGES: &str = "train_images.tc";
pub const TRAIN_SINOS: &str = "train_sinos.tc";
pub const EVAL_IMAGES: &str = "eval_images.tc";
pub const EVAL_SINOS: &str = "eval_sinos.tc";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_train: usize,
    pub n_eval: usize,
    pub phantom: PhantomConfig,
    pub grid: AngleGrid,
    /// Global model-unit scale: max |value| over the training sinograms.
    pub norm_scale: f32,
    /// Dataset-units to physical line integrals for Beer's-law dose
    /// simulation; chosen so max exp(-p_phys) stays >= 0.01 on training data.
    pub phys_scale: f64,
    /// SHA-256 over the four data files, in fixed order.
    pub data_sha256: String,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

/// Generate `n_train + n_eval` phantoms (indices 0..n, train first) and their
/// sinograms, and write the dataset directory. Byte-identical per config.
pub fn generate_dataset(
    phantom_cfg: &PhantomConfig,
    grid: &AngleGrid,
    n_train: usize,
    n_eval: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    phantom_cfg.validate()?;
    if n_train == 0 || n_eval == 0 {
        return Err(Error::Config {
            field: "n_train",
            reason: "n_train and n_eval must both be >= 1".into(),
        });
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let side = phantom_cfg.image_side;

    let write_split = |first: usize, count: usize, img_file: &str, sino_file: &str| -> Result<f32> {
        let mut images = Vec::with_capacity(count * side * side);
        let mut sinos = Vec::with_capacity(count * grid.n_angles * side);
        let mut max_abs = 0.0f32;
        for i in 0..count {
            let img = generate_phantom(phantom_cfg, (first + i) as u64)?;
            let sino = radon(&img, grid)?;
            max_abs = max_abs.max(sino.max_abs());
            images.extend_from_slice(&img.values);
            sinos.extend_from_slice(&sino.values);
        }
        Container::new(vec![count, side, side], images)?.save(&out_dir.join(img_file))?;
        Container::new(vec![count, grid.n_angles, side], sinos)?.save(&out_dir.join(sino_file))?;
        Ok(max_abs)
    };

    let train_max = write_split(0, n_train, TRAIN_IMAGES, TRAIN_SINOS)?;
    write_split(n_train, n_eval, EVAL_IMAGES, EVAL_SINOS)?;

    let norm_scale = if train_max > 0.0 { train_max } else { 1.0 };
    let phys_scale = (100.0f64).ln() / norm_scale as f64;
    let data_sha256 = hash_data_files(out_dir)?;
    let manifest = DatasetManifest {
        n_train,
        n_eval,
        phantom: phantom_cfg.clone(),
        grid: *grid,
        norm_scale,
        phys_scale,
        data_sha256,
    };
    let path = out_dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn hash_data_files(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in [TRAIN_IMAGES, TRAIN_SINOS, EVAL_IMAGES, EVAL_SINOS] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// In-memory dataset view.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    train_images: Container,
    train_sinos: Container,
    eval_images: Container,
    eval_sinos: Container,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        let hash = hash_data_files(dir)?;
        if hash != manifest.data_sha256 {
            return Err(Error::Integrity(format!(
                "dataset content hash mismatch in {}",
                dir.display()
            )));
        }
        let ds = Dataset {
            dir: dir.to_path_buf(),
            train_images: Container::load(&dir.join(TRAIN_IMAGES))?,
            train_sinos: Container::load(&dir.join(TRAIN_SINOS))?,
            eval_images: Container::load(&dir.join(EVAL_IMAGES))?,
            eval_sinos: Container::load(&dir.join(EVAL_SINOS))?,
            manifest,
        };
        let side = ds.manifest.phantom.image_side;
        if ds.train_images.shape != [ds.manifest.n_train, side, side]
            || ds.train_sinos.shape != [ds.manifest.n_train, ds.manifest.grid.n_angles, side]
            || ds.eval_images.shape != [ds.manifest.n_eval, side, side]
            || ds.eval_sinos.shape != [ds.manifest.n_eval, ds.manifest.grid.n_angles, side]
        {
            return Err(Error::Integrity("dataset shapes disagree with manifest".into()));
        }
        Ok(ds)
    }

    pub fn side(&self) -> usize {
        self.manifest.phantom.image_side
    }

    pub fn n_train(&self) -> usize {
        self.manifest.n_train
    }

    pub fn n_eval(&self) -> usize {
        self.manifest.n_eval
    }

    fn image_at(c: &Container, side: usize, i: usize) -> PhantomImage {
        PhantomImage {
            side,
            values: c.data[i * side * side..(i + 1) * side * side].to_vec(),
        }
    }

    fn sino_at(&self, c: &Container, i: usize) -> Sinogram {
        let n = self.manifest.grid.n_angles * self.side();
        Sinogram {
            grid: self.manifest.grid,
            n_bins: self.side(),
            values: c.data[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn train_image(&self, i: usize) -> PhantomImage {
        Self::image_at(&self.train_images, self.side(), i)
    }

    pub fn train_sino(&self, i: usize) -> Sinogram {
        self.sino_at(&self.train_sinos, i)
    }

    pub fn eval_image(&self, i: usize) -> PhantomImage {
        Self::image_at(&self.eval_images, self.side(), i)
    }

    pub fn eval_sino(&self, i: usize) -> Sinogram {
        self.sino_at(&self.eval_sinos, i)
    }
}
