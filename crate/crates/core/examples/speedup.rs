//! Examples per second for one, two and four replicas on OS threads.

use std::sync::Arc;

use airflux::datasets::{gaussian_blobs, BlobSpec};
use airflux::learners::{DenseClassifier, Learner};
use airflux::session::TrainJob;
use airflux::stream::{Dataset, Passes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!("{cores} core(s) available");
    let data = Dataset::Pairs(Arc::new(gaussian_blobs(&BlobSpec { dim: 32, samples: 8192, ..Default::default() })));
    let learner: Arc<dyn Learner> = Arc::new(DenseClassifier::new(32, Some(64), 4, 0));
    let mut base = None;
    for n in [1u32, 2, 4] {
        let mut job = TrainJob::new(learner.clone(), data.clone(), n);
        job.generator.batch_size = 64;
        job.generator.passes = Passes::Finite(2);
        job.model.alpha = 0.05;
        let out = job.run()?;
        let eps = out.examples_per_sec();
        let b = *base.get_or_insert(eps);
        println!("n={n}: {eps:>10.0} examples/s  speedup {:.2}  efficiency {:.2}", eps / b, eps / b / f64::from(n));
    }
    Ok(())
}
