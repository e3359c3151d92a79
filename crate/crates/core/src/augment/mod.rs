//! Seeded image augmentation stages and the pipelines built from them.
//!
//! Every kernel is a pure function of `(image, stage parameters, generator)`.
//! Pipelines hand stage `i` the sub-stream `i` of the view's [`RngStream`], so
//! a stage's draws never depend on its neighbours.

mod kernels;
mod pipeline;

pub use kernels::{
    adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, apply_jitter, color_jitter,
    gaussian_blur, gaussian_blur_with_sigma, gaussian_kernel, gaussian_noise, grayscale,
    horizontal_flip, normalize, random_resized_crop, reflect_index, resize_bilinear, solarize,
    sample_crop_rect, CropRect, JitterDraw, JitterOp,
};
pub use pipeline::{apply_pipeline, FloatImage, Pipeline, View};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One augmentation step with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    RandomResizedCrop {
        scale: (f64, f64),
        ratio: (f64, f64),
        size: usize,
    },
    HorizontalFlip {
        p: f64,
    },
    Grayscale {
        p: f64,
    },
    ColorJitter {
        p: f64,
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue: f64,
    },
    Solarize {
        p: f64,
        threshold: u8,
    },
    GaussianBlur {
        p: f64,
        sigma: (f64, f64),
    },
    /// Additive noise; `std` is expressed on the `[0, 1]` intensity scale.
    GaussianNoise {
        std: f64,
    },
    /// Converts to `f32` as `(v / 255 - mean[c]) / std[c]`. Must be the last stage.
    Normalize {
        mean: Vec<f32>,
        std: Vec<f32>,
    },
}

pub const DEFAULT_CROP_SCALE: (f64, f64) = (0.08, 1.0);
pub const DEFAULT_CROP_RATIO: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);

impl Stage {
    pub fn crop(size: usize) -> Self {
        Stage::RandomResizedCrop {
            scale: DEFAULT_CROP_SCALE,
            ratio: DEFAULT_CROP_RATIO,
            size,
        }
    }

    pub fn flip() -> Self {
        Stage::HorizontalFlip { p: 0.5 }
    }

    pub fn grayscale() -> Self {
        Stage::Grayscale { p: 0.2 }
    }

    pub fn jitter() -> Self {
        Stage::ColorJitter {
            p: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.2,
            hue: 0.1,
        }
    }

    pub fn solarize() -> Self {
        Stage::Solarize {
            p: 0.2,
            threshold: 128,
        }
    }

    pub fn blur() -> Self {
        Stage::GaussianBlur {
            p: 1.0,
            sigma: (0.1, 2.0),
        }
    }

    pub fn noise(std: f64) -> Self {
        Stage::GaussianNoise { std }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stage::RandomResizedCrop { .. } => "random_resized_crop",
            Stage::HorizontalFlip { .. } => "horizontal_flip",
            Stage::Grayscale { .. } => "grayscale",
            Stage::ColorJitter { .. } => "color_jitter",
            Stage::Solarize { .. } => "solarize",
            Stage::GaussianBlur { .. } => "gaussian_blur",
            Stage::GaussianNoise { .. } => "gaussian_noise",
            Stage::Normalize { .. } => "normalize",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidStage(format!("{}: {msg}", self.name())));
        let check_p = |p: f64| (0.0..=1.0).contains(&p);
        let check_range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        match self {
            Stage::RandomResizedCrop { scale, ratio, size } => {
                if !check_range(*scale) || scale.0 <= 0.0 || scale.1 > 1.0 {
                    return bad(format!("scale range {scale:?} must satisfy 0 < lo <= hi <= 1"));
                }
                if !check_range(*ratio) || ratio.0 <= 0.0 {
                    return bad(format!("ratio range {ratio:?} must satisfy 0 < lo <= hi"));
                }
                if *size == 0 {
                    return bad("size must be at least 1".into());
                }
            }
            Stage::HorizontalFlip { p } | Stage::Grayscale { p } | Stage::Solarize { p, .. } => {
                if !check_p(*p) {
                    return bad(format!("probability {p} outside [0, 1]"));
                }
            }
            Stage::ColorJitter {
                p,
                brightness,
                contrast,
                saturation,
                hue,
            } => {
                if !check_p(*p) {
                    return bad(format!("probability {p} outside [0, 1]"));
                }
                for (name, d) in [
                    ("brightness", brightness),
                    ("contrast", contrast),
                    ("saturation", saturation),
                    ("hue", hue),
                ] {
                    if !(d.is_finite() && *d >= 0.0) {
                        return bad(format!("{name} delta {d} must be >= 0"));
                    }
                }
                if *hue > 0.5 {
                    return bad(format!("hue delta {hue} must be <= 0.5 turns"));
                }
            }
            Stage::GaussianBlur { p, sigma } => {
                if !check_p(*p) {
                    return bad(format!("probability {p} outside [0, 1]"));
                }
                if !check_range(*sigma) || sigma.0 <= 0.0 {
                    return bad(format!("sigma range {sigma:?} must satisfy 0 < lo <= hi"));
                }
            }
            Stage::GaussianNoise { std } => {
                if !(std.is_finite() && *std >= 0.0) {
                    return bad(format!("std {std} must be >= 0"));
                }
            }
            Stage::Normalize { mean, std } => {
                if mean.is_empty() || mean.len() != std.len() {
                    return bad("mean and std need the same, non-zero length".into());
                }
                if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return bad("std entries must be positive".into());
                }
            }
        }
        Ok(())
    }
}
