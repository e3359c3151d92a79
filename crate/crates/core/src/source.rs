//! Random-access sample sources consumed by the loader.

use crate::error::{Error, Result};
use crate::image::ImageRecord;

/// Anything the loader can read samples from by index.
pub trait SampleSource: Send + Sync {
    fn len(&self) -> usize;

    fn read(&self, index: usize) -> Result<ImageRecord>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Average stored bytes per sample, used to size locality groups.
    fn mean_sample_bytes(&self) -> usize;
}

/// Samples held in memory, mostly for tests and synthetic data.
#[derive(Clone, Debug, Default)]
pub struct MemoryDataset {
    records: Vec<ImageRecord>,
}

impl MemoryDataset {
    pub fn new(records: Vec<ImageRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }
}

impl SampleSource for MemoryDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn read(&self, index: usize) -> Result<ImageRecord> {
        self.records.get(index).cloned().ok_or(Error::Index {
            index,
            len: self.records.len(),
        })
    }

    fn mean_sample_bytes(&self) -> usize {
        if self.records.is_empty() {
            return 1;
        }
        let total: usize = self.records.iter().map(|r| r.image.data().len()).sum();
        (total / self.records.len()).max(1)
    }
}
