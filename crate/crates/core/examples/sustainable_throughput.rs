//! Paced trials around a probed capacity, scored for sustainability.

use std::sync::Arc;
use std::time::Duration;

use airflux::datasets::{gaussian_blobs, BlobSpec};
use airflux::learners::{DenseClassifier, Learner};
use airflux::session::TrainJob;
use airflux::stream::{
    capacity_estimate, evaluate_trial, Dataset, Passes, Rate, SustainabilityCriteria, TrialOutcome,
};

fn trial(learner: &Arc<dyn Learner>, data: &Dataset, rate: Rate, c: &SustainabilityCriteria) -> TrialOutcome {
    let warmup = Duration::from_millis(100);
    let mut job = TrainJob::new(learner.clone(), data.clone(), 2);
    job.generator.batch_size = 32;
    job.generator.passes = Passes::Unbounded;
    job.generator.rate = rate;
    job.stop_after = Some(warmup + c.window);
    let out = job.run().expect("trial runs");
    TrialOutcome { latencies: out.latencies(), window_start_ns: warmup.as_nanos() as u64 }
}

fn main() {
    let data = Dataset::Pairs(Arc::new(gaussian_blobs(&BlobSpec::default())));
    let learner: Arc<dyn Learner> = Arc::new(DenseClassifier::new(8, Some(32), 4, 0));
    let c = SustainabilityCriteria { window: Duration::from_millis(800), ..Default::default() };

    let probe = evaluate_trial(f64::INFINITY, &trial(&learner, &data, Rate::Max, &c), &c);
    let cap = probe.achieved_rate;
    println!("unpaced: {cap:.0} events/s");

    let mut reports = Vec::new();
    for f in [0.25, 0.5, 1.0, 2.0] {
        let rate = cap * f;
        let r = evaluate_trial(rate, &trial(&learner, &data, Rate::PerSecond(rate), &c), &c);
        println!(
            "offered {:>10.0} achieved {:>10.0} p99 {:>8.2}ms quarters(us) {:?} sustainable {}",
            r.offered_rate,
            r.achieved_rate,
            r.latency_p99 as f64 / 1e6,
            r.p99_by_quarter.map(|q| q.map(|v| v / 1_000)),
            r.sustainable
        );
        reports.push(r);
    }
    println!("capacity estimate: {:?}", capacity_estimate(&reports));
}
