//! Per-instance SimCLR batches: two noisy copies of an image as the positive
//! pair, and a small noisy patch of the same image as the only negative.

use super::RelationMatrix;
use crate::augment::{gaussian_noise, resize_bilinear, sample_crop_rect, CropRect};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;

pub const DEFAULT_PATCH_SCALE: (f64, f64) = (0.05, 0.2);
pub const DEFAULT_NOISE_STD: f64 = 0.1;

const PATCH_RATIO: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceBatch {
    /// `[pos_a, pos_b, patch_neg]`.
    pub views: [Image; 3],
    /// Relates only `pos_a` and `pos_b`.
    pub relation: RelationMatrix,
}

/// Sub-streams: 0 and 1 for the positives' noise, 2 for the patch window, 3 for the patch noise.
pub fn build_instance_batch(
    image: &Image,
    noise_std: f64,
    patch_scale: (f64, f64),
    out_size: usize,
    rng: &RngStream,
) -> Result<InstanceBatch> {
    if !(patch_scale.0 > 0.0 && patch_scale.0 <= patch_scale.1 && patch_scale.1 < 1.0) {
        return Err(Error::InvalidParam(format!(
            "patch scale {patch_scale:?} must satisfy 0 < lo <= hi < 1"
        )));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidParam(format!("noise std {noise_std} must be >= 0")));
    }
    if out_size == 0 {
        return Err(Error::InvalidParam("out_size must be at least 1".into()));
    }
    let full = resize_bilinear(image, CropRect::full(image), out_size, out_size);
    let pos_a = gaussian_noise(&full, noise_std, &mut rng.stage(0));
    let pos_b = gaussian_noise(&full, noise_std, &mut rng.stage(1));
    let rect = sample_crop_rect(
        &mut rng.stage(2),
        image.height(),
        image.width(),
        patch_scale,
        PATCH_RATIO,
    );
    let patch = resize_bilinear(image, rect, out_size, out_size);
    let patch_neg = gaussian_noise(&patch, noise_std, &mut rng.stage(3));
    let relation = RelationMatrix::from_entries(3, [(0, 1, 1.0), (1, 0, 1.0)]).expect("valid");
    Ok(InstanceBatch {
        views: [pos_a, pos_b, patch_neg],
        relation,
    })
}
