//! Learning rate multiplied by the replica count versus left alone.

use std::sync::Arc;

use airflux::datasets::{gaussian_blobs, BlobSpec};
use airflux::learners::{DenseClassifier, Learner};
use airflux::session::TrainJob;
use airflux::stream::{Dataset, Passes};
use airflux::Executor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = Arc::new(gaussian_blobs(&BlobSpec { samples: 2048, ..Default::default() }));
    let learner: Arc<dyn Learner> = Arc::new(DenseClassifier::new(8, Some(16), 4, 0));
    let base = 0.1;
    println!("{:>3} {:>8} {:>10}", "n", "alpha", "tail loss");
    for n in [1u32, 2, 4] {
        for scale in [false, true] {
            if n == 1 && scale {
                continue;
            }
            let alpha = if scale { base * f64::from(n) } else { base };
            let mut job = TrainJob::new(learner.clone(), Dataset::Pairs(pairs.clone()), n);
            job.executor = Executor::deterministic(0);
            job.generator.batch_size = 16;
            job.generator.passes = Passes::Finite(2);
            job.model.alpha = alpha;
            let out = job.run()?;
            println!("{n:>3} {alpha:>8.3} {:>10.4}", out.tail_loss(50));
        }
    }
    Ok(())
}
