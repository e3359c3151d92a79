//! Building packed datasets from image folders, CSV manifests or synthetic data.

use std::path::{Path, PathBuf};

use serde::Serialize;
use viewforge_core::dataset::{pack_dataset, DatasetHandle, DatasetHeader, PackOptions, PackSummary, ValidationReport};
use viewforge_core::{Image, ImageRecord};

use crate::error::{HarnessError, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Where the images of a pack come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PackInput {
    /// A folder of images (label 0), or of class subfolders labelled by sorted name.
    Directory(PathBuf),
    /// CSV with a `path,label` header; paths are relative to the manifest.
    Manifest(PathBuf),
}

impl PackInput {
    pub fn from_path(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Ok(PackInput::Directory(path.to_path_buf()))
        } else if path.is_file() {
            Ok(PackInput::Manifest(path.to_path_buf()))
        } else {
            Err(HarnessError::Usage(format!("input {} does not exist", path.display())))
        }
    }
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| HarnessError::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Decodes any supported image file to 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::new(h as usize, w as usize, 3, img.into_raw())?)
}

/// `(path, label)` pairs in pack order.
pub fn list_inputs(input: &PackInput) -> Result<Vec<(PathBuf, u32)>> {
    match input {
        PackInput::Directory(dir) => {
            let entries = sorted_entries(dir)?;
            let classes: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
            let mut out = Vec::new();
            if classes.is_empty() {
                out.extend(entries.iter().filter(|p| is_image(p)).map(|p| (p.clone(), 0)));
            } else {
                for (label, class_dir) in classes.into_iter().enumerate() {
                    for p in sorted_entries(class_dir)?.into_iter().filter(|p| is_image(p)) {
                        out.push((p, label as u32));
                    }
                }
            }
            Ok(out)
        }
        PackInput::Manifest(path) => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut reader = csv::Reader::from_path(path)?;
            let headers = reader.headers()?.clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| HarnessError::Usage(format!("{}: missing {name:?} column", path.display())))
            };
            let (pc, lc) = (col("path")?, col("label")?);
            let mut out = Vec::new();
            for row in reader.records() {
                let row = row?;
                let label = row[lc]
                    .trim()
                    .parse::<u32>()
                    .map_err(|e| HarnessError::Usage(format!("{}: label {:?}: {e}", path.display(), &row[lc])))?;
                out.push((base.join(row[pc].trim()), label));
            }
            Ok(out)
        }
    }
}

pub fn pack_images(input: &PackInput, out: &Path, options: &PackOptions) -> Result<PackSummary> {
    let files = list_inputs(input)?;
    if files.is_empty() {
        return Err(HarnessError::Usage("no images found to pack".into()));
    }
    let records = files
        .iter()
        .map(|(p, label)| Ok(ImageRecord::new(load_rgb(p)?, *label)))
        .collect::<Result<Vec<_>>>()?;
    pack_records(&records, out, options)
}

pub fn pack_records(records: &[ImageRecord], out: &Path, options: &PackOptions) -> Result<PackSummary> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(pack_dataset(out, records, options)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct Inspection {
    pub path: PathBuf,
    pub file_bytes: u64,
    pub header: DatasetHeader,
    pub validation: ValidationReport,
    pub clean: bool,
}

pub fn inspect(path: &Path) -> Result<Inspection> {
    let handle = DatasetHandle::open(path)?;
    let validation = handle.validate();
    Ok(Inspection {
        path: path.to_path_buf(),
        file_bytes: handle.file_len(),
        header: *handle.header(),
        clean: validation.is_clean(),
        validation,
    })
}
