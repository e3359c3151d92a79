//! Command-line harness around `viewforge-core`: dataset packing, loader
//! benchmarks, SSL training runs, sweeps and report aggregation.

pub mod bench;
pub mod config;
pub mod data;
pub mod dump;
pub mod error;
pub mod pack;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod train;

pub use data::open_loader;
pub use error::{HarnessError, Result};
