//! Multi-view self-supervised data pipeline and joint-embedding loss kernels.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod image;
pub mod loader;
pub mod losses;
pub mod model;
pub mod rng;
pub mod source;

pub use error::{Error, Result};
pub use image::{Image, ImageRecord};
