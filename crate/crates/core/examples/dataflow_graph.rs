//! Text lines through map, split and batching operators into four model
//! replicas, with a side stream of prediction requests.

use std::sync::Arc;

use airflux::dataflow::{
    build_graph, run_graph, EdgeSpec, Executor, OperatorKind, OperatorSpec, Payload, PredictInput, PredictRequest,
    Record, Routing, RunOptions,
};
use airflux::learners::{Learner, NegativeSampler, Vocabulary, Word2Vec};
use airflux::model::ModelConfig;
use airflux::stream::{BatchingOperator, CollectSink, FnOperator, PayloadSource, RecordSource, SkipGram};

const TEXT: &str = "\
the quick brown fox jumps over the lazy dog
a lazy dog sleeps under the old tree
the brown fox runs past the old tree
quick foxes and lazy dogs share the field";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lines: Vec<&str> = TEXT.lines().cycle().take(400).collect();
    let vocab = Arc::new(Vocabulary::build(lines.iter().copied()));
    let sampler = Arc::new(NegativeSampler::new(vocab.counts())?);
    let learner: Arc<dyn Learner> = Arc::new(Word2Vec::new(vocab.len() as u32, 16, 0));
    let records = Arc::new(lines.iter().map(|l| Record::Text(l.to_string())).collect::<Vec<_>>());

    let v = vocab.clone();
    let fox = vocab.id("fox").expect("in vocabulary");
    let requests: Arc<Vec<Payload>> = Arc::new(
        (1..=8)
            .map(|id| {
                Payload::PredictRequest(PredictRequest { request_id: id, input: PredictInput::Token(fox), reply_to: None })
            })
            .collect(),
    );
    let bl = learner.clone();
    let ops = vec![
        OperatorSpec::new("source", OperatorKind::Source, 1, move |info| Box::new(RecordSource::new(info, records.clone()))),
        OperatorSpec::new("tokenize", OperatorKind::Map, 2, move |info| {
            let v = v.clone();
            Box::new(FnOperator::new(info, move |e, out| {
                if let Record::Text(s) = e.payload {
                    out.push(Record::Tokens(s.split_whitespace().filter_map(|t| v.id(t)).collect()));
                }
            }))
        }),
        OperatorSpec::new("batch", OperatorKind::Udf, 2, move |info| {
            let sg = SkipGram { window: 2, negatives: 3, sampler: Some(sampler.clone()) };
            Box::new(BatchingOperator::new(info, 32, bl.clone(), Some(sg), 7).expect("valid batch size"))
        }),
        OperatorSpec::new("predict", OperatorKind::Source, 1, move |_| Box::new(PayloadSource::new(requests.clone()))),
        OperatorSpec::model("model", 4, learner, ModelConfig { alpha: 2.0, ..Default::default() }),
        OperatorSpec::new("sink", OperatorKind::Sink, 1, |info| Box::new(CollectSink::new(info))),
    ];
    let edges = vec![
        EdgeSpec::new("source", "tokenize", Routing::hash()),
        EdgeSpec::new("tokenize", "batch", Routing::Forward),
        EdgeSpec::new("batch", "model", Routing::hash()),
        EdgeSpec::new("predict", "model", Routing::hash()),
        EdgeSpec::new("model", "model", Routing::Broadcast),
        EdgeSpec::new("model", "sink", Routing::Forward),
    ];
    let graph = build_graph(ops, edges)?;
    let report = run_graph(&graph, RunOptions { executor: Executor::deterministic(1), ..Default::default() })?.join()?;

    let mut models = report.model_reports();
    models.sort_by_key(|m| m.rank);
    for m in &models {
        let mean = m.losses.iter().map(|l| l.loss).sum::<f64>() / m.losses.len().max(1) as f64;
        println!("rank {}: {} local batches, mean loss {mean:.4}, clock {:?}", m.rank.0, m.losses.len(), m.clock.as_slice());
    }
    for p in report.collected() {
        if let Payload::Prediction(p) = p {
            println!("request {} served by rank {}: |v| = {:.3}", p.request_id, p.served_by.0, p.values.iter().map(|x| x * x).sum::<f32>().sqrt());
        }
    }
    println!("messages sent {} received {}", report.total_sent(), report.total_received());
    Ok(())
}
