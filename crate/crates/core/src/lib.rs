//! Desk-scale computed-tomography pipeline: phantom synthesis, parallel-beam
//! Radon simulation with dose and view-masking degradations, a masked
//! sinogram transformer with downstream heads, training loops, and SSIM/PSNR
//! evaluation against filtered back-projection.

pub mod container;
pub mod ctgeom;
pub mod dataset;
pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod trainer;

pub use error::{Error, Result};
