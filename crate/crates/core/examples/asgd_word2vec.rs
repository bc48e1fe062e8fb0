//! Word2Vec on a synthetic topic corpus: one replica against four exchanging
//! gradients asynchronously.

use std::sync::Arc;

use airflux::datasets::{token_counts, CorpusSpec};
use airflux::learners::{Learner, NegativeSampler, Word2Vec};
use airflux::session::TrainJob;
use airflux::stream::{Dataset, Passes, SkipGram};
use airflux::Executor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = CorpusSpec { vocab_size: 300, sentences: 1500, ..Default::default() };
    let sentences = Arc::new(spec.generate());
    let sampler = Arc::new(NegativeSampler::new(&token_counts(&sentences, spec.vocab_size))?);
    let data = Dataset::Sentences { sentences, skipgram: SkipGram { window: 2, negatives: 5, sampler: Some(sampler) } };
    let learner: Arc<dyn Learner> = Arc::new(Word2Vec::new(spec.vocab_size, 16, 0));

    for n in [1, 4] {
        let mut job = TrainJob::new(learner.clone(), data.clone(), n);
        job.executor = Executor::deterministic(0);
        job.generator.batch_size = 32;
        job.generator.passes = Passes::Finite(2);
        job.model.alpha = 5.0;
        let out = job.run()?;
        let curve = out.loss_curve();
        let head = airflux::session::tail_mean(&curve[..50.min(curve.len())], 50);
        println!(
            "n={n}: {} batches, first-50 loss {head:.4}, last-100 loss {:.4}, virtual time {:.3}s",
            curve.len(),
            out.tail_loss(100),
            out.elapsed_ns as f64 / 1e9
        );
    }
    Ok(())
}
