use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Event, StreamError};

/// How many times a finite dataset is replayed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Passes {
    Finite(u64),
    Unbounded,
}

/// Ingestion pacing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    /// As fast as downstream accepts.
    Max,
    /// Events per second, scheduled at fixed intervals from the start.
    PerSecond(f64),
}

impl Rate {
    pub fn validate(self) -> Result<Self, StreamError> {
        match self {
            Rate::PerSecond(r) if !(r.is_finite() && r > 0.0) => Err(StreamError::InvalidRate(r.to_string())),
            r => Ok(r),
        }
    }
}

/// Cyclic cursor over a dataset. Does not read any clock itself: callers
/// ask for the scheduled offset of each event and wait on their own clock.
#[derive(Clone, Debug)]
pub struct Replay<T> {
    data: Arc<Vec<T>>,
    passes: Passes,
    rate: Rate,
    offset: u64,
    stride: u64,
    emitted: u64,
}

impl<T> Replay<T> {
    pub fn new(data: Arc<Vec<T>>, passes: Passes, rate: Rate) -> Result<Self, StreamError> {
        if data.is_empty() {
            return Err(StreamError::EmptyDataset);
        }
        Ok(Self { data, passes, rate: rate.validate()?, offset: 0, stride: 1, emitted: 0 })
    }

    /// Restricts the cursor to positions `offset, offset + stride, ...` of the replayed stream.
    pub fn partition(mut self, offset: u64, stride: u64) -> Self {
        assert!(stride >= 1 && offset < stride);
        self.offset = offset;
        self.stride = stride;
        self
    }

    pub fn rate(&self) -> Rate {
        self.rate
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Scheduled offset from the start of the k-th emitted event (0-based), if paced.
    pub fn due_ns(&self, k: u64) -> Option<u64> {
        match self.rate {
            Rate::Max => None,
            Rate::PerSecond(r) => Some((k as f64 * 1e9 / r).round() as u64),
        }
    }

    /// Scheduled offset of the next event.
    pub fn next_due_ns(&self) -> Option<u64> {
        self.due_ns(self.emitted)
    }

    pub fn is_exhausted(&self) -> bool {
        match self.passes {
            Passes::Unbounded => false,
            Passes::Finite(p) => self.position() >= p.saturating_mul(self.data.len() as u64),
        }
    }

    fn position(&self) -> u64 {
        self.offset + self.emitted * self.stride
    }

    pub fn next_record(&mut self) -> Option<&T> {
        if self.is_exhausted() {
            return None;
        }
        let idx = (self.position() % self.data.len() as u64) as usize;
        self.emitted += 1;
        Some(&self.data[idx])
    }
}

/// Wall-clock replay: events carry nanoseconds since the iterator was created.
#[derive(Debug)]
pub struct ReplayIter<T> {
    replay: Replay<T>,
    start: Instant,
    last_ts: Option<u64>,
}

impl<T: Clone> Iterator for ReplayIter<T> {
    type Item = Event<T>;

    fn next(&mut self) -> Option<Event<T>> {
        if self.replay.is_exhausted() {
            return None;
        }
        let due = self.replay.next_due_ns();
        let payload = self.replay.next_record()?.clone();
        let mut ts = match due {
            Some(d) => {
                let now = self.start.elapsed().as_nanos() as u64;
                if d > now {
                    std::thread::sleep(Duration::from_nanos(d - now));
                }
                d
            }
            None => self.start.elapsed().as_nanos() as u64,
        };
        if let Some(last) = self.last_ts {
            ts = ts.max(last + 1);
        }
        self.last_ts = Some(ts);
        Some(Event::new(payload, ts))
    }
}

/// Replays `dataset` `passes` times with fresh, strictly increasing timestamps.
pub fn replay_dataset<T: Clone>(dataset: Vec<T>, passes: Passes, rate: Rate) -> Result<ReplayIter<T>, StreamError> {
    Ok(ReplayIter { replay: Replay::new(Arc::new(dataset), passes, rate)?, start: Instant::now(), last_ts: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_passes_of_five() {
        let ev: Vec<_> = replay_dataset(vec![1, 2, 3, 4, 5], Passes::Finite(2), Rate::Max).unwrap().collect();
        assert_eq!(ev.iter().map(|e| e.payload).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 1, 2, 3, 4, 5]);
        assert!(ev.windows(2).all(|w| w[0].ts < w[1].ts));
    }

    #[test]
    fn single_pass_is_plain_iteration() {
        let data = vec!["a", "b", "c"];
        let ev: Vec<_> = replay_dataset(data.clone(), Passes::Finite(1), Rate::Max).unwrap().map(|e| e.payload).collect();
        assert_eq!(ev, data);
    }

    #[test]
    fn empty_dataset_and_bad_rate() {
        assert!(matches!(replay_dataset(Vec::<u8>::new(), Passes::Unbounded, Rate::Max), Err(StreamError::EmptyDataset)));
        assert!(replay_dataset(vec![1], Passes::Unbounded, Rate::PerSecond(0.0)).is_err());
    }

    #[test]
    fn partitioned_cursors_cover_the_stream() {
        let data = Arc::new((0..7).collect::<Vec<u32>>());
        let mut all = Vec::new();
        for r in 0..3 {
            let mut c = Replay::new(data.clone(), Passes::Finite(2), Rate::Max).unwrap().partition(r, 3);
            while let Some(&x) = c.next_record() {
                all.push(x);
            }
        }
        all.sort();
        let mut expected: Vec<u32> = (0..7).chain(0..7).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn unbounded_never_exhausts() {
        let mut c = Replay::new(Arc::new(vec![1u8]), Passes::Unbounded, Rate::PerSecond(4.0)).unwrap();
        for _ in 0..100 {
            assert!(c.next_record().is_some());
        }
        assert_eq!(c.due_ns(4), Some(1_000_000_000));
    }

    #[test]
    fn wall_clock_pacing() {
        let start = Instant::now();
        let mut n = 0;
        for _ in replay_dataset(vec![0u8; 10], Passes::Unbounded, Rate::PerSecond(1000.0)).unwrap() {
            if start.elapsed() >= Duration::from_secs(1) {
                break;
            }
            n += 1;
        }
        assert!((950..=1050).contains(&n), "{n} events in one second");
    }
}
