//! Deterministic synthesis of ground-truth attenuation maps: random mixes of
//! circles, ellipses, triangles and rectangles on a square grid, with support
//! restricted to the inscribed circle so every projection angle sees the
//! whole object.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhantomConfig {
    pub image_side: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    /// Attenuation per shape, drawn uniformly from [low, high], both in [0, 1].
    pub intensity_range: [f32; 2],
    /// Shape size as a fraction of the image side, in (0, 0.5].
    pub size_range: [f32; 2],
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            image_side: 64,
            shapes_min: 3,
            shapes_max: 6,
            intensity_range: [0.2, 1.0],
            size_range: [0.05, 0.25],
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_side < 2 || !self.image_side.is_power_of_two() {
            return Err(Error::Config {
                field: "image_side",
                reason: format!("must be a power of two >= 2, got {}", self.image_side),
            });
        }
        if self.shapes_min > self.shapes_max {
            return Err(Error::Config {
                field: "shapes_min",
                reason: format!(
                    "shapes_min {} exceeds shapes_max {}",
                    self.shapes_min, self.shapes_max
                ),
            });
        }
        let [lo, hi] = self.intensity_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config {
                field: "intensity_range",
                reason: format!("need 0 <= low <= high <= 1, got [{lo}, {hi}]"),
            });
        }
        let [slo, shi] = self.size_range;
        if !(slo > 0.0 && slo <= shi && shi <= 0.5) {
            return Err(Error::Config {
                field: "size_range",
                reason: format!("need 0 < low <= high <= 0.5, got [{slo}, {shi}]"),
            });
        }
        Ok(())
    }
}

/// Square non-negative attenuation map, zero outside the inscribed circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomImage {
    pub side: usize,
    pub values: Vec<f32>,
}

impl PhantomImage {
    pub fn new(side: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != side * side {
            return Err(Error::Shape {
                op: "phantom_image",
                lhs: vec![side, side],
                rhs: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric("phantom values must be finite and >= 0".into()));
        }
        Ok(PhantomImage { side, values })
    }

    pub fn zeros(side: usize) -> Self {
        PhantomImage {
            side,
            values: vec![0.0; side * side],
        }
    }

    /// Centered disk of radius `r` pixels and intensity `c`.
    pub fn disk(side: usize, r: f32, c: f32) -> Self {
        let half = side as f32 / 2.0;
        let mut values = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                let dx = x as f32 + 0.5 - half;
                let dy = y as f32 + 0.5 - half;
                if dx * dx + dy * dy <= r * r {
                    values[y * side + x] = c;
                }
            }
        }
        PhantomImage { side, values }
    }

    pub fn pixel_sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Circle { cx: f32, cy: f32, r: f32, v: f32 },
    Ellipse { cx: f32, cy: f32, a: f32, b: f32, phi: f32, v: f32 },
    Rect { cx: f32, cy: f32, w: f32, h: f32, phi: f32, v: f32 },
    Triangle { pts: [(f32, f32); 3], v: f32 },
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Circle { cx, cy, r, .. } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            Shape::Ellipse { cx, cy, a, b, phi, .. } => {
                let (dx, dy) = (x - cx, y - cy);
                let (s, c) = phi.sin_cos();
                let u = dx * c + dy * s;
                let w = -dx * s + dy * c;
                (u / a).powi(2) + (w / b).powi(2) <= 1.0
            }
            Shape::Rect { cx, cy, w, h, phi, .. } => {
                let (dx, dy) = (x - cx, y - cy);
                let (s, c) = phi.sin_cos();
                let u = dx * c + dy * s;
                let t = -dx * s + dy * c;
                u.abs() <= w / 2.0 && t.abs() <= h / 2.0
            }
            Shape::Triangle { pts, .. } => {
                let sign = |p: (f32, f32), a: (f32, f32), b: (f32, f32)| {
                    (p.0 - b.0) * (a.1 - b.1) - (a.0 - b.0) * (p.1 - b.1)
                };
                let d1 = sign((x, y), pts[0], pts[1]);
                let d2 = sign((x, y), pts[1], pts[2]);
                let d3 = sign((x, y), pts[2], pts[0]);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }

    fn intensity(&self) -> f32 {
        match *self {
            Shape::Circle { v, .. }
            | Shape::Ellipse { v, .. }
            | Shape::Rect { v, .. }
            | Shape::Triangle { v, .. } => v,
        }
    }
}

/// splitmix64-style mixing so each (seed, index, ordinal) gets its own stream.
fn stream_seed(seed: u64, index: u64, ordinal: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9))
        .wrapping_add(ordinal.wrapping_mul(0x94D049BB133111EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn draw_shape(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Shape {
    let side = cfg.image_side as f32;
    let kind: u32 = rng.gen_range(0..4);
    let cx = rng.gen_range(0.0..side);
    let cy = rng.gen_range(0.0..side);
    let size = rng.gen_range(cfg.size_range[0]..=cfg.size_range[1]) * side;
    let v = rng.gen_range(cfg.intensity_range[0]..=cfg.intensity_range[1]);
    match kind {
        0 => Shape::Circle { cx, cy, r: size, v },
        1 => {
            let b = size * rng.gen_range(0.3..1.0);
            let phi = rng.gen_range(0.0..std::f32::consts::PI);
            Shape::Ellipse { cx, cy, a: size, b, phi, v }
        }
        2 => {
            let h = 2.0 * size * rng.gen_range(0.3..1.0);
            let phi = rng.gen_range(0.0..std::f32::consts::PI);
            Shape::Rect { cx, cy, w: 2.0 * size, h, phi, v }
        }
        _ => {
            let mut pts = [(0.0, 0.0); 3];
            for p in &mut pts {
                let ang = rng.gen_range(0.0..std::f32::consts::TAU);
                let rad = size * rng.gen_range(0.5..1.0);
                *p = (cx + rad * ang.cos(), cy + rad * ang.sin());
            }
            Shape::Triangle { pts, v }
        }
    }
}

/// Deterministic function of (config.seed, index). Overlapping shapes sum,
/// the result is clamped to [0, 1] and masked to the inscribed circle.
pub fn generate_phantom(cfg: &PhantomConfig, index: u64) -> Result<PhantomImage> {
    cfg.validate()?;
    let side = cfg.image_side;
    let mut meta_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, index, u64::MAX));
    let n_shapes = meta_rng.gen_range(cfg.shapes_min..=cfg.shapes_max);
    let shapes: Vec<Shape> = (0..n_shapes)
        .map(|ordinal| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, index, ordinal as u64));
            draw_shape(cfg, &mut rng)
        })
        .collect();

    let half = side as f32 / 2.0;
    let fov_r2 = half * half;
    let mut values = vec![0.0f32; side * side];
    for y in 0..side {
        for x in 0..side {
            let px = x as f32 + 0.5;
            let py = y as f32 + 0.5;
            let (dx, dy) = (px - half, py - half);
            if dx * dx + dy * dy > fov_r2 {
                continue;
            }
            let mut acc = 0.0f32;
            for s in &shapes {
                if s.contains(px, py) {
                    acc += s.intensity();
                }
            }
            values[y * side + x] = acc.min(1.0);
        }
    }
    Ok(PhantomImage { side, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shapes_gives_zero_image() {
        let cfg = PhantomConfig {
            shapes_min: 0,
            shapes_max: 0,
            ..Default::default()
        };
        let img = generate_phantom(&cfg, 0).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let cfg = PhantomConfig::default();
        let a = generate_phantom(&cfg, 7).unwrap();
        let b = generate_phantom(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn disk_pixel_count_matches_area() {
        let img = PhantomImage::disk(64, 8.0, 1.0);
        let count = img.values.iter().filter(|&&v| v > 0.0).count() as f64;
        let area = std::f64::consts::PI * 64.0;
        assert!((count - area).abs() / area < 0.05, "count={count} area={area}");
    }

    #[test]
    fn support_inside_inscribed_circle_and_range() {
        let cfg = PhantomConfig {
            shapes_min: 8,
            shapes_max: 12,
            ..Default::default()
        };
        for idx in 0..5 {
            let img = generate_phantom(&cfg, idx).unwrap();
            let side = img.side;
            let half = side as f32 / 2.0;
            for y in 0..side {
                for x in 0..side {
                    let v = img.values[y * side + x];
                    assert!((0.0..=1.0).contains(&v));
                    let dx = x as f32 + 0.5 - half;
                    let dy = y as f32 + 0.5 - half;
                    if dx * dx + dy * dy > half * half {
                        assert_eq!(v, 0.0, "pixel outside FOV at ({x},{y})");
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let cfg = PhantomConfig {
            intensity_range: [0.8, 0.2],
            ..Default::default()
        };
        let err = generate_phantom(&cfg, 0).unwrap_err();
        assert!(err.to_string().contains("intensity_range"));
    }
}
