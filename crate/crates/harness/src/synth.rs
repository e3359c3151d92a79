//! Synthetic toy data: each class is a fixed low-frequency grating, mixed with
//! per-sample nuisance fields shared across classes and pixel noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use viewforge_core::rng::{domains, RngKey, RngStream};
use viewforge_core::{Image, ImageRecord};

use crate::config::Config;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToySpec {
    pub samples: usize,
    pub side: usize,
    pub classes: usize,
    pub seed: u64,
    /// Class-template amplitude range.
    pub amplitude: (f64, f64),
    /// Std of each nuisance coefficient.
    pub nuisance: f64,
    /// Per-pixel noise std on the `[0, 1]` scale.
    pub pixel_noise: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            samples: 4096,
            side: 16,
            classes: 4,
            seed: 0,
            amplitude: (0.6, 1.0),
            nuisance: 0.35,
            pixel_noise: 0.03,
        }
    }
}

impl ToySpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = Self::default();
        let amp: Vec<f64> = cfg.list("toy.amplitude")?.unwrap_or(vec![d.amplitude.0, d.amplitude.1]);
        if amp.len() != 2 {
            return Err(crate::error::HarnessError::Config("toy.amplitude needs two values".into()));
        }
        Ok(Self {
            samples: cfg.or("toy.samples", d.samples)?,
            side: cfg.or("toy.side", d.side)?,
            classes: cfg.or("toy.classes", d.classes)?,
            seed: cfg.or("toy.seed", d.seed)?,
            amplitude: (amp[0], amp[1]),
            nuisance: cfg.or("toy.nuisance", d.nuisance)?,
            pixel_noise: cfg.or("toy.pixel_noise", d.pixel_noise)?,
        })
    }
}

const NUISANCE_FIELDS: usize = 6;

fn grating(side: usize, theta: f64, cycles: f64, phase: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 * theta.cos() + y as f64 * theta.sin()) / side as f64;
            out.push((2.0 * PI * cycles * u + phase).cos());
        }
    }
    out
}

/// Single-channel images labelled `0..classes`, in class-interleaved order.
/// `offset` shifts the sample keys so held-out sets never repeat training images.
pub fn toy_records(spec: &ToySpec, offset: usize) -> Vec<ImageRecord> {
    let side = spec.side;
    let templates: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| grating(side, PI * c as f64 / spec.classes as f64, 1.0, 0.9 * c as f64))
        .collect();
    let basis_stream = RngStream::new(RngKey::domain(spec.seed, 0, domains::SYNTHETIC_DATA));
    let mut basis_rng = basis_stream.stage(0);
    let nuisance: Vec<Vec<f64>> = (0..NUISANCE_FIELDS)
        .map(|_| {
            let theta = basis_rng.random_range(0.0..PI);
            let cycles = basis_rng.random_range(0.5..2.5);
            let phase = basis_rng.random_range(0.0..2.0 * PI);
            grating(side, theta, cycles, phase)
        })
        .collect();
    (0..spec.samples)
        .map(|k| {
            let i = k + offset;
            let label = i % spec.classes;
            let mut rng = RngStream::new(RngKey::new(spec.seed, 0, i as u64, 0)).stage(domains::SYNTHETIC_DATA);
            let amp = rng.random_range(spec.amplitude.0..=spec.amplitude.1);
            let coeffs: Vec<f64> = (0..NUISANCE_FIELDS)
                .map(|_| spec.nuisance * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let data = (0..side * side)
                .map(|p| {
                    let mut v = amp * templates[label][p];
                    for (c, field) in coeffs.iter().zip(&nuisance) {
                        v += c * field[p];
                    }
                    let noise: f64 = rng.sample(StandardNormal);
                    let px = 0.5 + 0.22 * v + spec.pixel_noise * noise;
                    (px * 255.0).round().clamp(0.0, 255.0) as u8
                })
                .collect();
            ImageRecord {
                image: Image::new(side, side, 1, data).expect("sized"),
                label: label as u32,
            }
        })
        .collect()
}

/// Colourful RGB images for loader benchmarks: a random linear colour ramp
/// per channel plus uniform noise. Labels cycle over `classes`.
pub fn random_rgb_records(samples: usize, side: usize, classes: usize, seed: u64) -> Vec<ImageRecord> {
    (0..samples)
        .map(|i| {
            let mut rng = RngStream::new(RngKey::new(seed, 0, i as u64, 1)).stage(domains::SYNTHETIC_DATA);
            let ramps: Vec<[f64; 3]> = (0..3)
                .map(|_| [rng.random_range(0.0..255.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect();
            let mut data = Vec::with_capacity(side * side * 3);
            for y in 0..side {
                for x in 0..side {
                    for r in &ramps {
                        let v = r[0] + r[1] * x as f64 + r[2] * y as f64 + rng.random_range(-20.0..20.0);
                        data.push(v.rem_euclid(256.0) as u8);
                    }
                }
            }
            ImageRecord {
                image: Image::new(side, side, 3, data).expect("sized"),
                label: (i % classes.max(1)) as u32,
            }
        })
        .collect()
}
