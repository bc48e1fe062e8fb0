use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::BatchLatency;

/// Outcome of one fixed-rate trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub offered_rate: f64,
    pub achieved_rate: f64,
    pub latency_p50: u64,
    pub latency_p95: u64,
    pub latency_p99: u64,
    /// p99 latency of the batches applied in each quarter of the window.
    pub p99_by_quarter: [Option<u64>; 4],
    pub sustainable: bool,
}

/// Thresholds deciding whether a trial kept up with its offered rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SustainabilityCriteria {
    /// Minimum `achieved / offered`.
    pub achieved_factor: f64,
    /// p99 growth over the last three quarters of the window that counts as a surge.
    pub growth_factor: f64,
    /// Smallest absolute p99 rise that counts as a surge; keeps scheduler
    /// jitter on sub-millisecond latencies from tripping the growth test.
    pub min_growth: Duration,
    pub window: Duration,
}

impl Default for SustainabilityCriteria {
    fn default() -> Self {
        Self {
            achieved_factor: 0.95,
            growth_factor: 1.5,
            min_growth: Duration::from_millis(5),
            window: Duration::from_secs(10),
        }
    }
}

/// Batches applied during a trial, and the events ingested.
#[derive(Clone, Debug, Default)]
pub struct TrialOutcome {
    pub latencies: Vec<BatchLatency>,
    /// Start of the measurement window on the latency clock.
    pub window_start_ns: u64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn p99_of(lat: &[&BatchLatency]) -> Option<u64> {
    if lat.is_empty() {
        return None;
    }
    let mut v: Vec<u64> = lat.iter().map(|l| l.latency_ns()).collect();
    v.sort_unstable();
    Some(percentile(&v, 99.0))
}

/// Scores a trial. Batches are bucketed into window quarters by the time
/// their latency was observed (application time); the trial is unsustainable if fewer than `achieved_factor` of the
/// offered events were applied, or if p99 latency rises strictly across the
/// last three quarters and ends at least `growth_factor` times, and
/// `min_growth` above, where it started.
pub fn evaluate_trial(offered_rate: f64, outcome: &TrialOutcome, c: &SustainabilityCriteria) -> ThroughputReport {
    let start = outcome.window_start_ns;
    let window = c.window.as_nanos() as u64;
    let end = start + window;
    let inside: Vec<&BatchLatency> =
        outcome.latencies.iter().filter(|l| l.applied_ts >= start && l.applied_ts <= end).collect();
    let events: u64 = inside.iter().map(|l| l.events).sum();
    let achieved = (events as f64 / c.window.as_secs_f64()).min(offered_rate);

    let mut all: Vec<u64> = inside.iter().map(|l| l.latency_ns()).collect();
    all.sort_unstable();

    let quarter = window / 4;
    let p99s: Vec<Option<u64>> = (0..4)
        .map(|q| {
            let lo = start + q * quarter;
            let hi = lo + quarter;
            let bucket: Vec<&BatchLatency> =
                inside.iter().copied().filter(|l| l.applied_ts >= lo && l.applied_ts < hi).collect();
            p99_of(&bucket)
        })
        .collect();
    let surging = match (p99s[1], p99s[2], p99s[3]) {
        (Some(a), Some(b), Some(d)) => {
            a < b
                && b < d
                && d as f64 >= c.growth_factor * a.max(1) as f64
                && d - a >= c.min_growth.as_nanos() as u64
        }
        _ => false,
    };
    let starved = achieved < c.achieved_factor * offered_rate;
    ThroughputReport {
        offered_rate,
        achieved_rate: achieved,
        latency_p50: percentile(&all, 50.0),
        latency_p95: percentile(&all, 95.0),
        latency_p99: percentile(&all, 99.0),
        p99_by_quarter: [p99s[0], p99s[1], p99s[2], p99s[3]],
        sustainable: !(starved || surging),
    }
}

/// Runs one trial per offered rate (ascending) and scores each.
pub fn measure_sustainable_throughput<E, F>(
    rates: &[f64],
    criteria: &SustainabilityCriteria,
    mut trial: F,
) -> Result<Vec<ThroughputReport>, E>
where
    F: FnMut(f64, &SustainabilityCriteria) -> Result<TrialOutcome, E>,
{
    rates
        .iter()
        .map(|&r| trial(r, criteria).map(|o| evaluate_trial(r, &o, criteria)))
        .collect()
}

/// Largest sustainable offered rate.
pub fn capacity_estimate(reports: &[ThroughputReport]) -> Option<f64> {
    reports.iter().filter(|r| r.sustainable).map(|r| r.offered_rate).fold(None, |m, r| Some(m.map_or(r, |m: f64| m.max(r))))
}

/// CSV with header `offered_rate,achieved_rate,p50,p95,p99,sustainable`.
pub fn write_throughput_csv(mut w: impl Write, reports: &[ThroughputReport]) -> std::io::Result<()> {
    writeln!(w, "offered_rate,achieved_rate,p50,p95,p99,sustainable")?;
    for r in reports {
        writeln!(
            w,
            "{:.3},{:.3},{},{},{},{}",
            r.offered_rate, r.achieved_rate, r.latency_p50, r.latency_p95, r.latency_p99, r.sustainable
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crit() -> SustainabilityCriteria {
        SustainabilityCriteria { window: Duration::from_secs(4), ..Default::default() }
    }

    /// One 10-event batch every 10 ms with latency given by `f(created)`.
    fn trial(f: impl Fn(u64) -> u64) -> TrialOutcome {
        let latencies = (0..400u64)
            .map(|i| {
                let created = i * 10_000_000;
                BatchLatency { batch_id: i + 1, events: 10, created_ts: created, applied_ts: created + f(created) }
            })
            .collect();
        TrialOutcome { latencies, window_start_ns: 0 }
    }

    #[test]
    fn flat_latency_is_sustainable() {
        let r = evaluate_trial(1000.0, &trial(|_| 2_000_000), &crit());
        assert!(r.sustainable, "{r:?}");
        assert!(r.latency_p50 <= r.latency_p95 && r.latency_p95 <= r.latency_p99);
        assert!(r.achieved_rate <= r.offered_rate);
    }

    #[test]
    fn growing_latency_is_not() {
        let r = evaluate_trial(1000.0, &trial(|t| 1_000_000 + t / 100), &crit());
        assert!(!r.sustainable);
    }

    #[test]
    fn backlog_under_overload_is_not() {
        // A back-pressured source: batches created early, applied late.
        let latencies = (0..400u64)
            .map(|i| {
                let applied = i * 10_000_000;
                BatchLatency { batch_id: i + 1, events: 10, created_ts: applied / 10, applied_ts: applied }
            })
            .collect();
        let r = evaluate_trial(10_000.0, &TrialOutcome { latencies, window_start_ns: 0 }, &crit());
        assert!(!r.sustainable);
        let q = r.p99_by_quarter.map(Option::unwrap);
        assert!(q[1] < q[2] && q[2] < q[3], "{q:?}");
    }

    #[test]
    fn sub_millisecond_wiggle_is_sustainable() {
        // 100 us rising to 300 us across the window: strictly increasing, 3x, but tiny.
        let r = evaluate_trial(1000.0, &trial(|t| 100_000 + t / 20_000), &crit());
        let q = r.p99_by_quarter.map(Option::unwrap);
        assert!(q[1] < q[2] && q[2] < q[3] && q[3] as f64 >= 1.5 * q[1] as f64, "{q:?}");
        assert!(r.sustainable, "{r:?}");
    }

    #[test]
    fn shortfall_is_not() {
        let r = evaluate_trial(2000.0, &trial(|_| 1_000), &crit());
        assert!(!r.sustainable);
        assert!((r.achieved_rate - 1000.0).abs() < 20.0);
    }

    #[test]
    fn percentiles_and_csv() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50);
        assert_eq!(percentile(&v, 99.0), 99);
        assert_eq!(percentile(&[], 99.0), 0);
        let reports = vec![ThroughputReport {
            offered_rate: 10.0,
            achieved_rate: 9.5,
            latency_p50: 1,
            latency_p95: 2,
            latency_p99: 3,
            p99_by_quarter: [None; 4],
            sustainable: true,
        }];
        let mut buf = Vec::new();
        write_throughput_csv(&mut buf, &reports).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "offered_rate,achieved_rate,p50,p95,p99,sustainable\n10.000,9.500,1,2,3,true\n"
        );
        assert_eq!(capacity_estimate(&reports), Some(10.0));
    }
}
