use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domains, RngKey, RngStream};

/// Sample visiting order within an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Traversal {
    Sequential,
    Random,
    /// Shuffles contiguous groups of `group` samples, then shuffles inside each
    /// group. `None` sizes groups to about one MiB of stored data.
    QuasiRandom { group: Option<usize> },
}

const QUASI_GROUP_BYTES: usize = 1 << 20;

/// Samples per MiB of packed data, at least one.
pub fn default_quasi_group(mean_sample_bytes: usize) -> usize {
    (QUASI_GROUP_BYTES / mean_sample_bytes.max(1)).max(1)
}

/// Visiting order for `epoch`. A `QuasiRandom` traversal without a group size
/// uses groups of one sample (see [`default_quasi_group`] for the loader's policy).
pub fn build_epoch_plan(sample_count: usize, traversal: Traversal, seed: u64, epoch: u64) -> Vec<usize> {
    let mut plan: Vec<usize> = (0..sample_count).collect();
    let stream = RngStream::new(RngKey::domain(seed, epoch, domains::EPOCH_PLAN));
    match traversal {
        Traversal::Sequential => {}
        Traversal::Random => plan.shuffle(&mut stream.stage(0)),
        Traversal::QuasiRandom { group } => {
            let group = group.unwrap_or(1).max(1);
            let mut groups: Vec<&[usize]> = plan.chunks(group).collect();
            groups.shuffle(&mut stream.stage(0));
            let mut inner = stream.stage(1);
            let mut out = Vec::with_capacity(sample_count);
            for g in groups {
                let start = out.len();
                out.extend_from_slice(g);
                out[start..].shuffle(&mut inner);
            }
            plan = out;
        }
    }
    plan
}

/// Crop side length ramp over epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionSchedule {
    pub start_res: usize,
    pub end_res: usize,
    pub start_epoch: u64,
    pub end_epoch: u64,
}

impl ResolutionSchedule {
    pub fn new(start_res: usize, end_res: usize, start_epoch: u64, end_epoch: u64) -> Result<Self> {
        let s = Self {
            start_res,
            end_res,
            start_epoch,
            end_epoch,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_res == 0 || self.start_res > self.end_res {
            return Err(Error::InvalidParam(format!(
                "resolution range {}..{} must satisfy 0 < start <= end",
                self.start_res, self.end_res
            )));
        }
        if self.start_epoch > self.end_epoch {
            return Err(Error::InvalidParam(format!(
                "epoch range {}..{} must satisfy start <= end",
                self.start_epoch, self.end_epoch
            )));
        }
        Ok(())
    }
}

/// Linear ramp from `start_res` to `end_res`, rounded down to a multiple of 32
/// and clamped to the range.
pub fn resolution_at(s: &ResolutionSchedule, epoch: u64) -> usize {
    if epoch <= s.start_epoch {
        return s.start_res;
    }
    if epoch >= s.end_epoch {
        return s.end_res;
    }
    let t = (epoch - s.start_epoch) as f64 / (s.end_epoch - s.start_epoch) as f64;
    let raw = s.start_res as f64 + t * (s.end_res - s.start_res) as f64;
    let rounded = (raw as usize / 32) * 32;
    rounded.clamp(s.start_res, s.end_res)
}
