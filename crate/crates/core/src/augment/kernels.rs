use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::pipeline::FloatImage;
use crate::error::{Error, Result};
use crate::image::Image;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const CROP_ATTEMPTS: usize = 10;

/// Draws the Bernoulli gate shared by every probabilistic stage.
#[inline]
fn gate<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn require_rgb(img: &Image, op: &str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "{op} needs a 3-channel image, got {}",
            img.channels()
        )));
    }
    Ok(())
}

/// Axis-aligned crop window in source pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRect {
    pub fn full(img: &Image) -> Self {
        Self {
            top: 0,
            left: 0,
            height: img.height(),
            width: img.width(),
        }
    }
}

/// Samples a crop window the way torchvision's `RandomResizedCrop` does:
/// area fraction uniform in `scale`, aspect ratio log-uniform in `ratio`,
/// ten attempts, then a ratio-clamped center crop.
pub fn sample_crop_rect<R: Rng>(
    rng: &mut R,
    height: usize,
    width: usize,
    scale: (f64, f64),
    ratio: (f64, f64),
) -> CropRect {
    let area = (height * width) as f64;
    let (log_lo, log_hi) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * uniform(rng, scale.0, scale.1);
        let aspect = uniform(rng, log_lo, log_hi).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let top = rng.random_range(0..=height - h);
            let left = rng.random_range(0..=width - w);
            return CropRect {
                top,
                left,
                height: h,
                width: w,
            };
        }
    }
    let in_ratio = width as f64 / height as f64;
    let (h, w) = if in_ratio < ratio.0 {
        let w = width;
        (((w as f64 / ratio.0).round() as usize).clamp(1, height), w)
    } else if in_ratio > ratio.1 {
        let h = height;
        (h, ((h as f64 * ratio.1).round() as usize).clamp(1, width))
    } else {
        (height, width)
    };
    CropRect {
        top: (height - h) / 2,
        left: (width - w) / 2,
        height: h,
        width: w,
    }
}

#[inline]
fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (hi - lo) * rng.random::<f64>()
    } else {
        // Still consume a draw so stream positions do not depend on the range.
        let _ = rng.random::<f64>();
        lo
    }
}

/// Bilinear resize of `rect` to `out_h × out_w` using half-pixel centers.
pub fn resize_bilinear(img: &Image, rect: CropRect, out_h: usize, out_w: usize) -> Image {
    let c = img.channels();
    let sy = rect.height as f64 / out_h as f64;
    let sx = rect.width as f64 / out_w as f64;
    // Precompute horizontal taps.
    let xs: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|x| axis_taps(x, sx, rect.width, rect.left))
        .collect();
    let mut out = vec![0u8; out_h * out_w * c];
    let src = img.data();
    let stride = img.width() * c;
    for y in 0..out_h {
        let (y0, y1, fy) = axis_taps(y, sy, rect.height, rect.top);
        let row0 = &src[y0 * stride..(y0 + 1) * stride];
        let row1 = &src[y1 * stride..(y1 + 1) * stride];
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let o = (y * out_w + x) * c;
            for ch in 0..c {
                let a = row0[x0 * c + ch] as f64;
                let b = row0[x1 * c + ch] as f64;
                let d = row1[x0 * c + ch] as f64;
                let e = row1[x1 * c + ch] as f64;
                let top = a + (b - a) * fx;
                let bottom = d + (e - d) * fx;
                out[o + ch] = to_u8(top + (bottom - top) * fy);
            }
        }
    }
    Image::new(out_h, out_w, c, out).expect("shape computed above")
}

#[inline]
fn axis_taps(dst: usize, scale: f64, len: usize, offset: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (offset + i0, offset + i1, src - i0 as f64)
}

pub fn random_resized_crop<R: Rng>(
    img: &Image,
    scale: (f64, f64),
    ratio: (f64, f64),
    size: usize,
    rng: &mut R,
) -> Result<Image> {
    if size == 0 {
        return Err(Error::InvalidStage("crop size must be at least 1".into()));
    }
    let rect = sample_crop_rect(rng, img.height(), img.width(), scale, ratio);
    Ok(resize_bilinear(img, rect, size, size))
}

pub fn horizontal_flip<R: Rng>(img: &Image, p: f64, rng: &mut R) -> Image {
    if !gate(rng, p) {
        return img.clone();
    }
    let w = img.width();
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..w {
            out.pixel_mut(y, x).copy_from_slice(img.pixel(y, w - 1 - x));
        }
    }
    out
}

#[inline]
fn luma(px: &[u8]) -> f64 {
    LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64
}

pub fn grayscale<R: Rng>(img: &Image, p: f64, rng: &mut R) -> Result<Image> {
    require_rgb(img, "grayscale")?;
    if !gate(rng, p) {
        return Ok(img.clone());
    }
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let g = to_u8(luma(px));
        px.fill(g);
    }
    Ok(out)
}

pub fn solarize<R: Rng>(img: &Image, p: f64, threshold: u8, rng: &mut R) -> Image {
    if !gate(rng, p) {
        return img.clone();
    }
    let mut out = img.clone();
    for v in out.data_mut() {
        if *v >= threshold {
            *v = 255 - *v;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

/// The random choices of one color-jitter application.
#[derive(Clone, Debug, PartialEq)]
pub struct JitterDraw {
    pub apply: bool,
    pub order: [JitterOp; 4],
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterDraw {
    /// Draw order is fixed (gate, permutation, then the four factors) so the
    /// draw is reproducible from the stage's sub-stream alone.
    pub fn sample<R: Rng>(
        rng: &mut R,
        p: f64,
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue: f64,
    ) -> Self {
        let apply = gate(rng, p);
        let mut order = [
            JitterOp::Brightness,
            JitterOp::Contrast,
            JitterOp::Saturation,
            JitterOp::Hue,
        ];
        order.shuffle(rng);
        let factor = |rng: &mut R, d: f64| uniform(rng, (1.0 - d).max(0.0), 1.0 + d);
        let brightness = factor(rng, brightness);
        let contrast = factor(rng, contrast);
        let saturation = factor(rng, saturation);
        let hue = uniform(rng, -hue, hue);
        Self {
            apply,
            order,
            brightness,
            contrast,
            saturation,
            hue,
        }
    }
}

fn float_pixels(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| v as f64).collect()
}

fn from_float(img: &Image, buf: &[f64]) -> Image {
    Image::new(
        img.height(),
        img.width(),
        img.channels(),
        buf.iter().map(|&v| to_u8(v)).collect(),
    )
    .expect("same shape")
}

fn brightness_in_place(buf: &mut [f64], f: f64) {
    for v in buf {
        *v = (*v * f).clamp(0.0, 255.0);
    }
}

fn contrast_in_place(buf: &mut [f64], f: f64) {
    let n = (buf.len() / 3) as f64;
    let mean = buf
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .sum::<f64>()
        / n;
    for v in buf {
        *v = (f * *v + (1.0 - f) * mean).clamp(0.0, 255.0);
    }
}

fn saturation_in_place(buf: &mut [f64], f: f64) {
    for p in buf.chunks_exact_mut(3) {
        let g = LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2];
        for v in p {
            *v = (f * *v + (1.0 - f) * g).clamp(0.0, 255.0);
        }
    }
}

fn hue_in_place(buf: &mut [f64], shift: f64) {
    for p in buf.chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(p[0] / 255.0, p[1] / 255.0, p[2] / 255.0);
        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        p[0] = (r * 255.0).clamp(0.0, 255.0);
        p[1] = (g * 255.0).clamp(0.0, 255.0);
        p[2] = (b * 255.0).clamp(0.0, 255.0);
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, max);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (sector as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

pub fn adjust_brightness(img: &Image, factor: f64) -> Image {
    let mut buf = float_pixels(img);
    brightness_in_place(&mut buf, factor);
    from_float(img, &buf)
}

pub fn adjust_contrast(img: &Image, factor: f64) -> Result<Image> {
    require_rgb(img, "contrast")?;
    let mut buf = float_pixels(img);
    contrast_in_place(&mut buf, factor);
    Ok(from_float(img, &buf))
}

pub fn adjust_saturation(img: &Image, factor: f64) -> Result<Image> {
    require_rgb(img, "saturation")?;
    let mut buf = float_pixels(img);
    saturation_in_place(&mut buf, factor);
    Ok(from_float(img, &buf))
}

/// Rotates hue by `shift` turns.
pub fn adjust_hue(img: &Image, shift: f64) -> Result<Image> {
    require_rgb(img, "hue")?;
    let mut buf = float_pixels(img);
    hue_in_place(&mut buf, shift);
    Ok(from_float(img, &buf))
}

/// Applies a drawn jitter. Sub-operations whose configured delta is zero are
/// skipped entirely, so a zero-delta jitter is an exact identity.
pub fn apply_jitter(img: &Image, draw: &JitterDraw, deltas: [f64; 4]) -> Result<Image> {
    require_rgb(img, "color_jitter")?;
    if !draw.apply {
        return Ok(img.clone());
    }
    let mut buf = float_pixels(img);
    for op in draw.order {
        match op {
            JitterOp::Brightness if deltas[0] > 0.0 => brightness_in_place(&mut buf, draw.brightness),
            JitterOp::Contrast if deltas[1] > 0.0 => contrast_in_place(&mut buf, draw.contrast),
            JitterOp::Saturation if deltas[2] > 0.0 => saturation_in_place(&mut buf, draw.saturation),
            JitterOp::Hue if deltas[3] > 0.0 => hue_in_place(&mut buf, draw.hue),
            _ => {}
        }
    }
    Ok(from_float(img, &buf))
}

pub fn color_jitter<R: Rng>(
    img: &Image,
    p: f64,
    deltas: [f64; 4],
    rng: &mut R,
) -> Result<Image> {
    require_rgb(img, "color_jitter")?;
    let draw = JitterDraw::sample(rng, p, deltas[0], deltas[1], deltas[2], deltas[3]);
    apply_jitter(img, &draw, deltas)
}

/// Mirror-reflects `i` into `0..len` without repeating the edge sample.
#[inline]
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with a fixed σ and reflect padding.
pub fn gaussian_blur_with_sigma(img: &Image, sigma: f64) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * c;
            for (t, &kv) in k.iter().enumerate() {
                let sx = reflect_index(x as isize + t as isize - r, w);
                let s = (y * w + sx) * c;
                for ch in 0..c {
                    tmp[o + ch] += kv * src[s + ch] as f64;
                }
            }
        }
    }
    let mut out = vec![0u8; h * w * c];
    let mut acc = vec![0f64; c];
    for y in 0..h {
        for x in 0..w {
            acc.fill(0.0);
            for (t, &kv) in k.iter().enumerate() {
                let sy = reflect_index(y as isize + t as isize - r, h);
                let s = (sy * w + x) * c;
                for ch in 0..c {
                    acc[ch] += kv * tmp[s + ch];
                }
            }
            let o = (y * w + x) * c;
            for ch in 0..c {
                out[o + ch] = to_u8(acc[ch]);
            }
        }
    }
    Image::new(h, w, c, out).expect("same shape")
}

pub fn gaussian_blur<R: Rng>(img: &Image, p: f64, sigma: (f64, f64), rng: &mut R) -> Image {
    let apply = gate(rng, p);
    let s = uniform(rng, sigma.0, sigma.1);
    if !apply {
        return img.clone();
    }
    gaussian_blur_with_sigma(img, s)
}

/// Adds i.i.d. `N(0, std²)` noise on the `[0, 1]` scale, then rounds and clamps.
pub fn gaussian_noise<R: Rng>(img: &Image, std: f64, rng: &mut R) -> Image {
    if std == 0.0 {
        return img.clone();
    }
    let sigma = std * 255.0;
    let mut out = img.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = to_u8(*v as f64 + sigma * n);
    }
    out
}

pub fn normalize(img: &Image, mean: &[f32], std: &[f32]) -> Result<FloatImage> {
    let c = img.channels();
    if mean.len() != c || std.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "normalize has {} channel statistics for a {c}-channel image",
            mean.len()
        )));
    }
    let data = img
        .data()
        .chunks_exact(c)
        .flat_map(|px| {
            px.iter()
                .enumerate()
                .map(|(ch, &v)| (v as f32 / 255.0 - mean[ch]) / std[ch])
        })
        .collect();
    Ok(FloatImage::new(img.height(), img.width(), c, data))
}
