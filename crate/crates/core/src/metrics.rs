//! SSIM / PSNR and the sweep harness that evaluates reconstruction methods
//! across mask-ratio or dose conditions on a shared eval set.

use crate::ctgeom::{apply_dose, apply_mask, DoseModel, MaskScheme, MaskSpec, MaskedSinogram, Sinogram};
use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f32 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

fn check_same_shape(a: &[f32], b: &[f32], side: usize) -> Result<()> {
    if a.len() != side * side || b.len() != side * side {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

/// Structural similarity: 11x11 Gaussian window (sigma 1.5), C1=(0.01 L)^2,
/// C2=(0.03 L)^2, averaged over all fully-contained windows.
pub fn ssim(a: &[f32], b: &[f32], side: usize, dynamic_range: f32) -> Result<f64> {
    check_same_shape(a, b, side)?;
    if side < SSIM_WINDOW {
        return Err(Error::Shape {
            op: "ssim",
            lhs: vec![side, side],
            rhs: vec![SSIM_WINDOW, SSIM_WINDOW],
        });
    }
    let w = gaussian_window();
    let l = dynamic_range as f64;
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);
    let half = SSIM_WINDOW / 2;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for cy in half..side - half {
        for cx in half..side - half {
            let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
            let (mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let weight = w[wy * SSIM_WINDOW + wx];
                    let va = a[(cy + wy - half) * side + cx + wx - half] as f64;
                    let vb = b[(cy + wy - half) * side + cx + wx - half] as f64;
                    mu_a += weight * va;
                    mu_b += weight * vb;
                    aa += weight * va * va;
                    bb += weight * vb * vb;
                    ab += weight * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            acc += s;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// 10 log10(L^2 / MSE), capped at [`PSNR_CAP_DB`] for identical images.
pub fn psnr(a: &[f32], b: &[f32], side: usize, peak: f32) -> Result<f64> {
    check_same_shape(a, b, side)?;
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB as f64);
    }
    Ok((10.0 * ((peak as f64).powi(2) / mse).log10()).min(PSNR_CAP_DB as f64))
}

/// Clamp a reconstruction to the metric dynamic range [0, 1].
pub fn clamp_unit(values: &[f32]) -> Vec<f32> {
    values.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone)]
pub struct QualityReport {
    pub method: String,
    pub condition: f64,
    pub ssim: Vec<f64>,
    pub psnr: Vec<f64>,
}

impl QualityReport {
    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
    pub fn std_ssim(&self) -> f64 {
        std(&self.ssim)
    }
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// How the clean sinogram is degraded before each method sees it.
#[derive(Debug, Clone, Copy)]
pub enum SweepKind {
    Mask(MaskScheme),
    Dose,
}

/// A reconstruction route under test: degraded sinogram in, image out.
pub struct Method<'a> {
    pub label: String,
    #[allow(clippy::type_complexity)]
    pub recon: Box<dyn Fn(&MaskedSinogram) -> Result<Vec<f32>> + 'a>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub conditions: Vec<f64>,
    pub methods: Vec<String>,
    /// cells[m][c]: mean SSIM, or the recorded failure.
    pub ssim_cells: Vec<Vec<std::result::Result<f64, String>>>,
    pub psnr_cells: Vec<Vec<std::result::Result<f64, String>>>,
}

impl SweepTable {
    pub fn cell(&self, method: &str, ci: usize) -> Option<f64> {
        let mi = self.methods.iter().position(|m| m == method)?;
        self.ssim_cells[mi][ci].as_ref().ok().copied()
    }
}

pub fn cell_seed(base: u64, cond: usize, sample: usize) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add((cond as u64).wrapping_mul(0xD1B54A32D192ED03))
        .wrapping_add((sample as u64).wrapping_mul(0x8CB92BA72F3D8DD7));
    z = (z ^ (z >> 29)).wrapping_mul(0xBF58476D1CE4E5B9);
    z ^ (z >> 32)
}

pub struct SweepInput<'a> {
    /// (clean sinogram, ground-truth phantom values in [0,1]).
    pub samples: Vec<(&'a Sinogram, &'a [f32])>,
    pub side: usize,
    pub kind: SweepKind,
    pub conditions: Vec<f64>,
    /// Dataset-units to physical scale, dose sweeps only.
    pub phys_scale: f64,
    pub incident_flux: f64,
    pub base_seed: u64,
}

/// Degrade every eval sample at every condition, run every method, score
/// against ground truth. Per-cell seeds make the whole table deterministic;
/// per-cell failures are recorded without aborting the sweep.
pub fn sweep(input: &SweepInput, methods: &[Method]) -> Result<(SweepTable, Vec<QualityReport>)> {
    if input.conditions.is_empty() {
        return Err(Error::Config {
            field: "conditions",
            reason: "sweep needs at least one condition value".into(),
        });
    }
    let mut ssim_cells = vec![vec![]; methods.len()];
    let mut psnr_cells = vec![vec![]; methods.len()];
    let mut reports = Vec::new();
    for (ci, &cond) in input.conditions.iter().enumerate() {
        // Degrade once per (condition, sample), shared by all methods.
        let mut degraded = Vec::with_capacity(input.samples.len());
        for (si, (sino, _)) in input.samples.iter().enumerate() {
            let seed = cell_seed(input.base_seed, ci, si);
            let m = match input.kind {
                SweepKind::Mask(scheme) => {
                    let spec = MaskSpec {
                        scheme,
                        ratio: cond as f32,
                        rng_seed: seed,
                    };
                    apply_mask(sino, &spec)?
                }
                SweepKind::Dose => {
                    let dose = DoseModel {
                        incident_flux: input.incident_flux,
                        dose_fraction: cond,
                        rng_seed: seed,
                    };
                    let noisy = apply_dose(sino, &dose, input.phys_scale)?;
                    let all: Vec<usize> = (0..sino.grid.n_angles).collect();
                    MaskedSinogram {
                        sinogram: noisy,
                        kept_indices: all,
                    }
                }
            };
            degraded.push(m);
        }
        for (mi, method) in methods.iter().enumerate() {
            let mut ssims = Vec::with_capacity(degraded.len());
            let mut psnrs = Vec::with_capacity(degraded.len());
            let mut failure: Option<String> = None;
            for (dm, (_, truth)) in degraded.iter().zip(&input.samples) {
                match (method.recon)(dm) {
                    Ok(img) => {
                        let img = clamp_unit(&img);
                        ssims.push(ssim(&img, truth, input.side, 1.0)?);
                        psnrs.push(psnr(&img, truth, input.side, 1.0)?);
                    }
                    Err(e) => {
                        failure.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            match failure {
                Some(msg) => {
                    ssim_cells[mi].push(Err(msg.clone()));
                    psnr_cells[mi].push(Err(msg));
                }
                None => {
                    ssim_cells[mi].push(Ok(mean(&ssims)));
                    psnr_cells[mi].push(Ok(mean(&psnrs)));
                    reports.push(QualityReport {
                        method: method.label.clone(),
                        condition: cond,
                        ssim: ssims,
                        psnr: psnrs,
                    });
                }
            }
        }
    }
    Ok((
        SweepTable {
            conditions: input.conditions.clone(),
            methods: methods.iter().map(|m| m.label.clone()).collect(),
            ssim_cells,
            psnr_cells,
        },
        reports,
    ))
}
