//! Stale-synchronous rounds: replicas may run at most `k` local gradients
//! ahead before waiting for their peers.

use std::sync::Arc;

use airflux::datasets::{gaussian_blobs, BlobSpec};
use airflux::learners::{DenseClassifier, Learner};
use airflux::session::TrainJob;
use airflux::stream::Dataset;
use airflux::{Executor, Mode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = Arc::new(gaussian_blobs(&BlobSpec { samples: 1024, ..Default::default() }));
    let learner: Arc<dyn Learner> = Arc::new(DenseClassifier::new(8, Some(16), 4, 0));
    for mode in [Mode::Asgd, Mode::Ssp(2), Mode::Ssp(8)] {
        let mut job = TrainJob::new(learner.clone(), Dataset::Pairs(pairs.clone()), 3);
        job.executor = Executor::Deterministic { seed: 4, link_latency_ns: 20_000, jitter: 0.5, record_trace: false };
        job.mode = mode;
        job.generator.batch_size = 16;
        job.model.alpha = 0.2;
        let out = job.run()?;
        let max_staleness = out.staleness_logs().iter().flatten().map(|r| r.staleness).max().unwrap_or(0);
        let barriers: usize = out.models.iter().map(|m| m.barrier_clocks.len()).sum();
        println!(
            "{mode:?}: tail loss {:.4}, max staleness {max_staleness}, barriers {barriers}, time {:.2}ms",
            out.tail_loss(20),
            out.elapsed_ns as f64 / 1e6
        );
        if let Some(c) = out.models[0].barrier_clocks.first() {
            println!("  rank 0 first barrier released at clock {:?}", c.as_slice());
        }
    }
    Ok(())
}
