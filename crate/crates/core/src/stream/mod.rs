//! Event ingestion, tumbling windows and throughput measurement.

mod generator;
mod meter;
mod ops;
mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::TrainingPair;

pub use generator::{Batcher, BatchingOperator, Dataset, GeneratorConfig, MiniBatchGenerator, SkipGram};
pub use meter::{
    capacity_estimate, evaluate_trial, measure_sustainable_throughput, percentile, write_throughput_csv,
    SustainabilityCriteria, ThroughputReport, TrialOutcome,
};
pub use ops::{CollectSink, FnOperator, PayloadSource, RecordSource};
pub use replay::{replay_dataset, Passes, Rate, Replay, ReplayIter};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("cannot replay an empty dataset")]
    EmptyDataset,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("invalid rate {0}")]
    InvalidRate(String),
}

/// A timestamped stream element. `ts` is nanoseconds on a monotonic clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event<T> {
    pub payload: T,
    pub ts: u64,
}

impl<T> Event<T> {
    pub fn new(payload: T, ts: u64) -> Self {
        Self { payload, ts }
    }
}

/// A fixed-size group of training pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniBatch {
    pub id: u64,
    pub pairs: Vec<TrainingPair>,
    /// Timestamp of the last event contributing to the batch.
    pub created_ts: u64,
    /// Key used to route the batch to a model rank.
    pub shard_key: Vec<u8>,
}

/// Incremental tumbling window of size `b`.
#[derive(Debug)]
pub struct Tumbler<T> {
    size: usize,
    pending: Vec<Event<T>>,
}

impl<T> Tumbler<T> {
    pub fn new(size: usize) -> Result<Self, StreamError> {
        if size == 0 {
            return Err(StreamError::ZeroBatchSize);
        }
        Ok(Self { size, pending: Vec::with_capacity(size) })
    }

    /// Adds an event; returns a full window when one completes.
    pub fn push(&mut self, e: Event<T>) -> Option<Vec<Event<T>>> {
        self.pending.push(e);
        if self.pending.len() == self.size {
            Some(std::mem::replace(&mut self.pending, Vec::with_capacity(self.size)))
        } else {
            None
        }
    }

    /// Events waiting for their window to fill.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

/// Splits a stream into consecutive, non-overlapping windows of `b` events.
/// A trailing partial window is dropped.
pub fn tumble<T, I>(events: I, b: usize) -> Result<impl Iterator<Item = Vec<Event<T>>>, StreamError>
where
    I: IntoIterator<Item = Event<T>>,
{
    let mut t = Tumbler::new(b)?;
    let mut it = events.into_iter();
    Ok(std::iter::from_fn(move || {
        for e in it.by_ref() {
            if let Some(w) = t.push(e) {
                return Some(w);
            }
        }
        None
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn events(n: u64) -> Vec<Event<u64>> {
        (1..=n).map(|i| Event::new(i, i * 10)).collect()
    }

    #[test]
    fn windows_of_three() {
        let w: Vec<Vec<u64>> = tumble(events(7), 3)
            .unwrap()
            .map(|b| b.into_iter().map(|e| e.payload).collect())
            .collect();
        assert_eq!(w, vec![vec![1, 2, 3], vec![4, 5, 6]]);
        let mut t = Tumbler::new(3).unwrap();
        for e in events(7) {
            t.push(e);
        }
        assert_eq!(t.pending(), 1);
    }

    #[test]
    fn unit_windows_and_zero_size() {
        assert_eq!(tumble(events(4), 1).unwrap().count(), 4);
        assert!(matches!(tumble(events(4), 0).map(|_| ()), Err(StreamError::ZeroBatchSize)));
    }

    proptest! {
        #[test]
        fn window_count_and_order(e in 0u64..500, b in 1usize..40) {
            let ws: Vec<_> = tumble(events(e), b).unwrap().collect();
            prop_assert_eq!(ws.len() as u64, e / b as u64);
            let flat: Vec<u64> = ws.iter().flatten().map(|e| e.payload).collect();
            let expected: Vec<u64> = (1..=(e / b as u64) * b as u64).collect();
            prop_assert_eq!(flat, expected);
        }
    }
}
