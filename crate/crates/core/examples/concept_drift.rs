//! Some tokens change topic halfway through the stream; their embeddings
//! move further than the rest.

use airflux::datasets::CorpusSpec;
use airflux::drift::{run_drift_experiment, DriftEngine, DriftScenario, Shift};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = DriftScenario {
        corpus: CorpusSpec { vocab_size: 100, topics: 5, sentence_len: 10, sentences: 1500, noise: 0.05, seed: 3 },
        drift_time: 1000,
        shifted_tokens: vec![0, 40],
        ..Default::default()
    };
    let engine = DriftEngine::default();
    let drifted = run_drift_experiment(&scenario, &engine)?;
    let control = run_drift_experiment(&DriftScenario { shift: Shift::Identity, ..scenario.clone() }, &engine)?;

    let (shifted, rest) = drifted.report.split_medians(&scenario.shifted_tokens);
    println!("loss: pretrain {:.4}, finetune {:.4}", drifted.pretrain_loss, drifted.finetune_loss);
    println!("median cosine difference: shifted {shifted:.4}, unshifted {rest:.4}");
    println!("no-drift mean {:.4}, noise floor {:.4}", control.report.mean, control.report.noise_floor());
    println!("most moved:");
    for t in drifted.report.top_k.iter().take(5) {
        println!("  token {:>3}  {:.4}", t.token, t.cosine_diff);
    }
    Ok(())
}
