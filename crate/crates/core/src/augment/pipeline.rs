use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{kernels, Stage, DEFAULT_CROP_RATIO, DEFAULT_CROP_SCALE};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;

/// Interleaved `f32` image produced by a trailing `normalize` stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloatImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FloatImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// The output of a pipeline: 8-bit unless the pipeline ends with `normalize`.
#[derive(Clone, Debug, PartialEq)]
pub enum View {
    Bytes(Image),
    Float(FloatImage),
}

impl View {
    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            View::Bytes(i) => (i.height(), i.width(), i.channels()),
            View::Float(f) => (f.height(), f.width(), f.channels()),
        }
    }

    pub fn as_bytes(&self) -> Option<&Image> {
        match self {
            View::Bytes(i) => Some(i),
            View::Float(_) => None,
        }
    }

    pub fn as_float(&self) -> Option<&FloatImage> {
        match self {
            View::Float(f) => Some(f),
            View::Bytes(_) => None,
        }
    }
}

/// An ordered list of stages producing one view.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    stages: Vec<Stage>,
}

impl Pipeline {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        for (i, s) in stages.iter().enumerate() {
            s.validate()?;
            if matches!(s, Stage::Normalize { .. }) && i + 1 != stages.len() {
                return Err(Error::InvalidStage(
                    "normalize must be the last stage".into(),
                ));
            }
        }
        Ok(Self { stages })
    }

    /// A pass-through pipeline. The loader accepts it; [`apply_pipeline`] does not.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The common SSL branch: crop, flip 0.5, jitter 0.8, gray 0.2, blur 1.0, solarize 0.2.
    pub fn ssl_default(size: usize) -> Self {
        Self::new(vec![
            Stage::crop(size),
            Stage::flip(),
            Stage::jitter(),
            Stage::grayscale(),
            Stage::blur(),
            Stage::solarize(),
        ])
        .expect("default stages are valid")
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn push(&mut self, stage: Stage) -> Result<()> {
        let mut stages = self.stages.clone();
        stages.push(stage);
        *self = Self::new(stages)?;
        Ok(())
    }

    /// Output side length if the pipeline contains a crop.
    pub fn output_size(&self) -> Option<usize> {
        self.stages.iter().rev().find_map(|s| match s {
            Stage::RandomResizedCrop { size, .. } => Some(*size),
            _ => None,
        })
    }

    /// Copy with every crop's output size replaced.
    pub fn with_crop_size(&self, new_size: usize) -> Self {
        let stages = self
            .stages
            .iter()
            .map(|s| match s {
                Stage::RandomResizedCrop { scale, ratio, .. } => Stage::RandomResizedCrop {
                    scale: *scale,
                    ratio: *ratio,
                    size: new_size,
                },
                other => other.clone(),
            })
            .collect();
        Self { stages }
    }

    /// Parses the line-oriented pipeline grammar (see `docs/pipeline.md`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut stages = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let stage = parse_stage(line).map_err(|message| Error::PipelineParse {
                line: lineno + 1,
                message,
            })?;
            stages.push(stage);
        }
        Self::new(stages)
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}", s.name())?;
            match s {
                Stage::RandomResizedCrop { scale, ratio, size } => write!(
                    f,
                    " scale={},{} ratio={},{} size={size}",
                    scale.0, scale.1, ratio.0, ratio.1
                )?,
                Stage::HorizontalFlip { p } | Stage::Grayscale { p } => write!(f, " p={p}")?,
                Stage::ColorJitter {
                    p,
                    brightness,
                    contrast,
                    saturation,
                    hue,
                } => write!(
                    f,
                    " p={p} brightness={brightness} contrast={contrast} saturation={saturation} hue={hue}"
                )?,
                Stage::Solarize { p, threshold } => write!(f, " p={p} threshold={threshold}")?,
                Stage::GaussianBlur { p, sigma } => {
                    write!(f, " p={p} sigma={},{}", sigma.0, sigma.1)?
                }
                Stage::GaussianNoise { std } => write!(f, " std={std}")?,
                Stage::Normalize { mean, std } => write!(
                    f,
                    " mean={} std={}",
                    join(mean.iter()),
                    join(std.iter())
                )?,
            }
        }
        Ok(())
    }
}

fn join<T: fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

struct Params<'a> {
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Params<'a> {
    fn parse(tokens: &[&'a str], allowed: &[&str]) -> std::result::Result<Self, String> {
        let mut pairs = Vec::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{t}`"))?;
            if !allowed.contains(&k) {
                return Err(format!("unknown parameter `{k}` (allowed: {})", allowed.join(", ")));
            }
            if pairs.iter().any(|(pk, _)| *pk == k) {
                return Err(format!("duplicate parameter `{k}`"));
            }
            pairs.push((k, v));
        }
        Ok(Self { pairs })
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn num<T: FromStr>(&self, key: &str, default: Option<T>) -> std::result::Result<T, String> {
        match self.raw(key) {
            Some(v) => v.parse().map_err(|_| format!("bad value `{v}` for `{key}`")),
            None => default.ok_or_else(|| format!("missing required parameter `{key}`")),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> std::result::Result<Option<Vec<T>>, String> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|x| x.trim().parse().map_err(|_| format!("bad value `{v}` for `{key}`")))
                    .collect()
            })
            .transpose()
    }

    fn range(&self, key: &str, default: Option<(f64, f64)>) -> std::result::Result<(f64, f64), String> {
        match self.list::<f64>(key)? {
            Some(v) if v.len() == 2 => Ok((v[0], v[1])),
            Some(v) if v.len() == 1 => Ok((v[0], v[0])),
            Some(_) => Err(format!("`{key}` takes lo,hi")),
            None => default.ok_or_else(|| format!("missing required parameter `{key}`")),
        }
    }
}

fn parse_stage(line: &str) -> std::result::Result<Stage, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let (name, rest) = tokens.split_first().expect("non-empty line");
    let stage = match *name {
        "random_resized_crop" | "crop" => {
            let p = Params::parse(rest, &["scale", "ratio", "size"])?;
            Stage::RandomResizedCrop {
                scale: p.range("scale", Some(DEFAULT_CROP_SCALE))?,
                ratio: p.range("ratio", Some(DEFAULT_CROP_RATIO))?,
                size: p.num("size", None)?,
            }
        }
        "horizontal_flip" | "flip" => {
            let p = Params::parse(rest, &["p"])?;
            Stage::HorizontalFlip { p: p.num("p", Some(0.5))? }
        }
        "grayscale" => {
            let p = Params::parse(rest, &["p"])?;
            Stage::Grayscale { p: p.num("p", Some(0.2))? }
        }
        "color_jitter" | "jitter" => {
            let p = Params::parse(rest, &["p", "brightness", "contrast", "saturation", "hue"])?;
            Stage::ColorJitter {
                p: p.num("p", Some(0.8))?,
                brightness: p.num("brightness", Some(0.4))?,
                contrast: p.num("contrast", Some(0.4))?,
                saturation: p.num("saturation", Some(0.2))?,
                hue: p.num("hue", Some(0.1))?,
            }
        }
        "solarize" => {
            let p = Params::parse(rest, &["p", "threshold"])?;
            Stage::Solarize {
                p: p.num("p", Some(0.2))?,
                threshold: p.num("threshold", Some(128))?,
            }
        }
        "gaussian_blur" | "blur" => {
            let p = Params::parse(rest, &["p", "sigma"])?;
            Stage::GaussianBlur {
                p: p.num("p", Some(1.0))?,
                sigma: p.range("sigma", Some((0.1, 2.0)))?,
            }
        }
        "gaussian_noise" | "noise" => {
            let p = Params::parse(rest, &["std"])?;
            Stage::GaussianNoise { std: p.num("std", Some(0.1))? }
        }
        "normalize" => {
            let p = Params::parse(rest, &["mean", "std"])?;
            Stage::Normalize {
                mean: p.list("mean")?.ok_or("missing required parameter `mean`")?,
                std: p.list("std")?.ok_or("missing required parameter `std`")?,
            }
        }
        other => return Err(format!("unknown stage `{other}`")),
    };
    stage.validate().map_err(|e| e.to_string())?;
    Ok(stage)
}

fn apply_byte_stage(img: &Image, stage: &Stage, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Image> {
    match stage {
        Stage::RandomResizedCrop { scale, ratio, size } => {
            kernels::random_resized_crop(img, *scale, *ratio, *size, rng)
        }
        Stage::HorizontalFlip { p } => Ok(kernels::horizontal_flip(img, *p, rng)),
        Stage::Grayscale { p } => kernels::grayscale(img, *p, rng),
        Stage::ColorJitter {
            p,
            brightness,
            contrast,
            saturation,
            hue,
        } => kernels::color_jitter(img, *p, [*brightness, *contrast, *saturation, *hue], rng),
        Stage::Solarize { p, threshold } => Ok(kernels::solarize(img, *p, *threshold, rng)),
        Stage::GaussianBlur { p, sigma } => Ok(kernels::gaussian_blur(img, *p, *sigma, rng)),
        Stage::GaussianNoise { std } => Ok(kernels::gaussian_noise(img, *std, rng)),
        Stage::Normalize { .. } => unreachable!("normalize handled by apply_pipeline"),
    }
}

/// Runs `pipeline` on `img`; stage `i` draws from sub-stream `i` of `rng`.
pub fn apply_pipeline(img: &Image, pipeline: &Pipeline, rng: &RngStream) -> Result<View> {
    if pipeline.is_empty() {
        return Err(Error::EmptyPipeline);
    }
    let mut current = img.clone();
    for (i, stage) in pipeline.stages().iter().enumerate() {
        if let Stage::Normalize { mean, std } = stage {
            return Ok(View::Float(kernels::normalize(&current, mean, std)?));
        }
        let mut sub = rng.stage(i as u64);
        current = apply_byte_stage(&current, stage, &mut sub)?;
    }
    Ok(View::Bytes(current))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;
    use rand::{Rng, SeedableRng};

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, 3, (0..h * w * 3).map(|_| r.random()).collect()).unwrap()
    }

    fn stream(seed: u64) -> RngStream {
        RngStream::new(RngKey::new(seed, 0, 0, 0))
    }

    #[test]
    fn parses_full_grammar() {
        let text = "\
            # default branch\n\
            random_resized_crop scale=0.2,1.0 size=32\n\
            horizontal_flip p=0.5\n\
            color_jitter p=0.8 brightness=0.4 contrast=0.4 saturation=0.2 hue=0.1\n\
            grayscale p=0.2\n\
            gaussian_blur p=1.0 sigma=0.1,2.0\n\
            solarize p=0.2 threshold=128\n\
            gaussian_noise std=0.05\n\
            normalize mean=0.5,0.5,0.5 std=0.25,0.25,0.25\n";
        let p = Pipeline::parse(text).unwrap();
        assert_eq!(p.stages().len(), 8);
        assert_eq!(p.output_size(), Some(32));
        assert_eq!(Pipeline::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Pipeline::parse("grayscale p=0.2\nsparkle p=1").unwrap_err();
        assert!(matches!(err, Error::PipelineParse { line: 2, .. }));
        assert!(Pipeline::parse("grayscale p=1.5").is_err());
        assert!(Pipeline::parse("grayscale q=0.5").is_err());
        assert!(Pipeline::parse("random_resized_crop scale=0.5,0.2 size=8").is_err());
        assert!(Pipeline::parse("normalize mean=0 std=1\ngrayscale").is_err());
    }

    #[test]
    fn empty_pipeline_is_rejected() {
        let img = random_image(0, 4, 4);
        assert!(matches!(
            apply_pipeline(&img, &Pipeline::empty(), &stream(0)),
            Err(Error::EmptyPipeline)
        ));
    }

    #[test]
    fn zero_probability_grayscale_is_identity() {
        let img = random_image(1, 12, 12);
        let p = Pipeline::new(vec![Stage::Grayscale { p: 0.0 }]).unwrap();
        assert_eq!(apply_pipeline(&img, &p, &stream(3)).unwrap(), View::Bytes(img));
    }

    #[test]
    fn default_branch_runs() {
        let img = random_image(2, 48, 40);
        let out = apply_pipeline(&img, &Pipeline::ssl_default(24), &stream(4)).unwrap();
        assert_eq!(out.shape(), (24, 24, 3));
    }

    #[test]
    fn appending_a_stage_keeps_earlier_draws() {
        let img = random_image(3, 32, 32);
        let a = Stage::RandomResizedCrop {
            scale: (0.2, 1.0),
            ratio: DEFAULT_CROP_RATIO,
            size: 16,
        };
        let b = Stage::jitter();
        let c = Stage::solarize();
        let ab = Pipeline::new(vec![a.clone(), b.clone()]).unwrap();
        let abc = Pipeline::new(vec![a.clone(), b, c]).unwrap();
        let just_a = Pipeline::new(vec![a]).unwrap();
        let s = stream(77);
        let out_ab = apply_pipeline(&img, &ab, &s).unwrap();
        let out_a = apply_pipeline(&img, &just_a, &s).unwrap();
        // Solarize after AB sees exactly AB's output.
        let out_abc = apply_pipeline(&img, &abc, &s).unwrap();
        let expected = kernels::solarize(out_ab.as_bytes().unwrap(), 0.2, 128, &mut s.stage(2));
        assert_eq!(out_abc, View::Bytes(expected));
        // And A's own output is the input B received.
        let b_only = kernels::color_jitter(out_a.as_bytes().unwrap(), 0.8, [0.4, 0.4, 0.2, 0.1], &mut s.stage(1)).unwrap();
        assert_eq!(out_ab, View::Bytes(b_only));
    }
}
