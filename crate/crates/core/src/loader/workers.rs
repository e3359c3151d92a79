use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{Batch, EpochJob, StageTimes};
use crate::error::Result;

type Finished = (usize, Result<Batch>, StageTimes);

/// Ordered batches of one epoch.
///
/// At most `prefetch_depth + num_workers` batches are in flight; finished
/// batches wait in a reorder buffer until every earlier batch was delivered.
/// The first error ends the epoch.
pub struct EpochIter {
    job: Arc<EpochJob>,
    next: usize,
    issued: usize,
    window: usize,
    jobs: Option<Sender<usize>>,
    results: Option<Receiver<Finished>>,
    pending: BTreeMap<usize, (Result<Batch>, StageTimes)>,
    cancel: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    times: StageTimes,
    failed: bool,
}

impl EpochIter {
    pub(crate) fn start(job: EpochJob, num_workers: usize, prefetch_depth: usize) -> Self {
        let job = Arc::new(job);
        let cancel = Arc::new(AtomicBool::new(false));
        let mut it = Self {
            job: Arc::clone(&job),
            next: 0,
            issued: 0,
            window: prefetch_depth + num_workers,
            jobs: None,
            results: None,
            pending: BTreeMap::new(),
            cancel: Arc::clone(&cancel),
            threads: Vec::new(),
            times: StageTimes::default(),
            failed: false,
        };
        if num_workers == 0 || job.num_batches == 0 {
            return it;
        }
        let (job_tx, job_rx) = unbounded::<usize>();
        let (res_tx, res_rx) = unbounded::<Finished>();
        for w in 0..num_workers {
            let job = Arc::clone(&job);
            let job_rx = job_rx.clone();
            let res_tx = res_tx.clone();
            let cancel = Arc::clone(&cancel);
            let handle = std::thread::Builder::new()
                .name(format!("loader-worker-{w}"))
                .spawn(move || {
                    for index in job_rx.iter() {
                        if cancel.load(Ordering::Relaxed) {
                            break;
                        }
                        let (res, times) = job.build(index);
                        if res_tx.send((index, res, times)).is_err() {
                            break;
                        }
                    }
                })
                .expect("spawn loader worker");
            it.threads.push(handle);
        }
        it.jobs = Some(job_tx);
        it.results = Some(res_rx);
        it.dispatch();
        it
    }

    fn dispatch(&mut self) {
        let Some(tx) = &self.jobs else { return };
        while self.issued < self.job.num_batches && self.issued < self.next + self.window {
            if tx.send(self.issued).is_err() {
                return;
            }
            self.issued += 1;
        }
    }

    pub fn epoch(&self) -> u64 {
        self.job.epoch
    }

    pub fn num_batches(&self) -> usize {
        self.job.num_batches
    }

    /// Stage times of the batches delivered so far.
    pub fn stage_times(&self) -> StageTimes {
        self.times
    }
}

impl Iterator for EpochIter {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        if self.failed || self.next >= self.job.num_batches {
            return None;
        }
        let (res, times) = match &self.results {
            None => self.job.build(self.next),
            Some(rx) => loop {
                if let Some(done) = self.pending.remove(&self.next) {
                    break done;
                }
                let (index, res, times) = rx.recv().expect("loader worker panicked");
                self.pending.insert(index, (res, times));
            },
        };
        self.times.add(&times);
        self.next += 1;
        self.failed = res.is_err();
        self.dispatch();
        Some(res)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.job.num_batches - self.next;
        (0, Some(left))
    }
}

impl Drop for EpochIter {
    fn drop(&mut self) {
        self.cancel.store(true, Ordering::Relaxed);
        self.jobs.take();
        self.results.take();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
