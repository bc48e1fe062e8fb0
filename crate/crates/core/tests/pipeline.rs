use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use airflux::dataflow::{
    build_graph, hash_shard, run_graph, EdgeSpec, Executor, Mode, OperatorKind, OperatorSpec, Payload, PredictInput,
    PredictRequest, Record, Routing, RunOptions,
};
use airflux::datasets::{dyadic_pairs, CorpusSpec};
use airflux::learners::{Learner, Linear, NegativeSampler, Vocabulary, Word2Vec};
use airflux::model::{verify_staleness, ModelConfig};
use airflux::stream::{
    BatchingOperator, CollectSink, Dataset, FnOperator, GeneratorConfig, MiniBatchGenerator, Passes, PayloadSource,
    RecordSource, SkipGram,
};

const LINES: &[&str] = &[
    "the cat sat on the mat",
    "the dog sat on the log",
    "a cat and a dog met on the mat",
    "the log was by the mat and the cat",
    "dogs and cats sat together",
];

fn text_pipeline(n: u32, requests: Vec<Payload>) -> airflux::DataflowGraph {
    let corpus: Vec<&str> = LINES.iter().cycle().take(200).copied().collect();
    let vocab = Arc::new(Vocabulary::build(corpus.iter().copied()));
    let sampler = Arc::new(NegativeSampler::new(vocab.counts()).unwrap());
    let learner: Arc<dyn Learner> = Arc::new(Word2Vec::new(vocab.len() as u32, 8, 1));
    let records: Arc<Vec<Record>> = Arc::new(corpus.iter().map(|s| Record::Text(s.to_string())).collect());

    let source = OperatorSpec::new("source", OperatorKind::Source, 1, move |info| {
        Box::new(RecordSource::new(info, records.clone()))
    });
    let tokenize = OperatorSpec::new("tokenize", OperatorKind::Map, 2, move |info| {
        let vocab = vocab.clone();
        Box::new(FnOperator::new(info, move |e, out| {
            if let Record::Text(s) = e.payload {
                out.push(Record::Tokens(s.split_whitespace().filter_map(|t| vocab.id(t)).collect()));
            }
        }))
    });
    let split = OperatorSpec::new("split", OperatorKind::Split, 2, |info| {
        Box::new(FnOperator::new(info, |e, out| {
            if let Record::Tokens(t) = e.payload {
                out.extend(t.chunks(4).map(|c| Record::Tokens(c.to_vec())));
            }
        }))
    });
    let bl = learner.clone();
    let batch = OperatorSpec::new("batch", OperatorKind::Udf, 2, move |info| {
        let sg = SkipGram { window: 2, negatives: 2, sampler: Some(sampler.clone()) };
        Box::new(BatchingOperator::new(info, 16, bl.clone(), Some(sg), 3).unwrap())
    });
    let requests = Arc::new(requests);
    let predict = OperatorSpec::new("predict", OperatorKind::Source, 1, move |_| {
        Box::new(PayloadSource::new(requests.clone()))
    });
    let cfg = ModelConfig { alpha: 1.0, ..Default::default() };
    let sink = OperatorSpec::new("sink", OperatorKind::Sink, 1, |info| Box::new(CollectSink::new(info)));
    build_graph(
        vec![source, tokenize, split, batch, predict, OperatorSpec::model("model", n, learner, cfg), sink],
        vec![
            EdgeSpec::new("source", "tokenize", Routing::hash()),
            EdgeSpec::new("tokenize", "split", Routing::Forward),
            EdgeSpec::new("split", "batch", Routing::hash()),
            EdgeSpec::new("batch", "model", Routing::hash()),
            EdgeSpec::new("predict", "model", Routing::hash()),
            EdgeSpec::new("model", "model", Routing::Broadcast),
            EdgeSpec::new("model", "sink", Routing::Forward),
        ],
    )
    .unwrap()
}

fn requests(k: u64) -> Vec<Payload> {
    (1..=k)
        .map(|id| Payload::PredictRequest(PredictRequest { request_id: id, input: PredictInput::Token(0), reply_to: None }))
        .collect()
}

#[test]
fn text_pipeline_trains_and_serves_predictions() {
    for executor in [Executor::deterministic(4), Executor::Threads] {
        let g = text_pipeline(4, requests(12));
        let opts = RunOptions { executor, ..Default::default() };
        let report = run_graph(&g, opts).unwrap().join().unwrap();

        let mut models = report.model_reports();
        models.sort_by_key(|m| m.rank);
        assert_eq!(models.len(), 4);
        let total = models[0].clock.total();
        assert!(total > 0);
        for m in &models {
            assert_eq!(m.clock, models[0].clock);
            // Same updates, possibly applied in another order: equal up to rounding.
            let drift = m
                .params
                .as_slice()
                .iter()
                .zip(models[0].params.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0f32, f32::max);
            assert!(drift < 1e-4, "replica {:?} differs by {drift}", m.rank);
        }
        let local: usize = models.iter().map(|m| m.losses.len()).sum();
        assert_eq!(local as u64, total);
        let logs: Vec<_> = models.iter().map(|m| m.staleness.clone()).collect();
        assert_eq!(verify_staleness(&logs).unwrap() as u64, total * 4);

        let ids: BTreeSet<u64> = report
            .collected()
            .into_iter()
            .map(|p| match p {
                Payload::Prediction(p) => {
                    assert_eq!(p.values.len(), 8);
                    assert!(p.values.iter().all(|v| v.is_finite()));
                    p.request_id
                }
                other => panic!("sink received {:?}", other.kind()),
            })
            .collect();
        assert_eq!(ids, (1..=12).collect());
        assert_eq!(models.iter().map(|m| m.predictions).sum::<u64>(), 12);
        assert_eq!(report.total_sent(), report.total_received());
    }
}

#[test]
fn predictions_follow_request_hash() {
    let g = text_pipeline(3, requests(30));
    let report = run_graph(&g, RunOptions { executor: Executor::deterministic(9), ..Default::default() })
        .unwrap()
        .join()
        .unwrap();
    for p in report.collected() {
        if let Payload::Prediction(p) = p {
            assert_eq!(p.served_by, hash_shard(&p.request_id.to_le_bytes(), 3));
        }
    }
}

#[test]
fn hash_shard_spreads_keys_evenly() {
    let mut counts = [0u32; 4];
    for k in 0u64..10_000 {
        counts[hash_shard(&k.to_le_bytes(), 4).index()] += 1;
    }
    for c in counts {
        assert!((2000..=3000).contains(&c), "{counts:?}");
    }
}

fn generator_graph(n: u32, events: usize, batch: usize, passes: Passes) -> airflux::DataflowGraph {
    let learner: Arc<dyn Learner> = Arc::new(Linear::new(3));
    let data = Dataset::Pairs(Arc::new(dyadic_pairs(events, 3, 2)));
    let gl = learner.clone();
    let gen = OperatorSpec::new("gen", OperatorKind::Source, 1, move |info| {
        let c = GeneratorConfig { batch_size: batch, passes, ..Default::default() };
        Box::new(MiniBatchGenerator::new(info, data.clone(), gl.clone(), c).unwrap())
    });
    let cfg = ModelConfig { alpha: 0.05, ..Default::default() };
    build_graph(
        vec![gen, OperatorSpec::model("model", n, learner, cfg)],
        vec![EdgeSpec::new("gen", "model", Routing::hash()), EdgeSpec::new("model", "model", Routing::Broadcast)],
    )
    .unwrap()
}

#[test]
fn eight_events_in_batches_of_four_give_two_batches() {
    let g = generator_graph(4, 8, 4, Passes::Finite(1));
    let report = run_graph(&g, RunOptions { executor: Executor::deterministic(0), ..Default::default() })
        .unwrap()
        .join()
        .unwrap();
    let models = report.model_reports();
    let batches: usize = models.iter().map(|m| m.losses.len()).sum();
    assert_eq!(batches, 2);
    assert!(models.iter().all(|m| m.clock.total() == 2));
}

#[test]
fn stopped_run_conserves_messages() {
    let g = generator_graph(3, 64, 4, Passes::Unbounded);
    let opts = RunOptions {
        executor: Executor::Threads,
        stop_after: Some(Duration::from_millis(200)),
        ..Default::default()
    };
    let report = run_graph(&g, opts).unwrap().join().unwrap();
    assert_eq!(report.total_sent(), report.total_received() + report.total_dropped());
    assert_eq!(report.total_seq_gaps(), 0);
    assert!(report.model_reports().iter().all(|m| m.stopped));
    assert!(report.model_reports().iter().any(|m| !m.losses.is_empty()));
}

#[test]
fn ssp_pipeline_with_corpus_keeps_replicas_within_bound() {
    let spec = CorpusSpec { sentences: 300, ..Default::default() };
    let sentences = Arc::new(spec.generate());
    let counts = airflux::datasets::token_counts(&sentences, spec.vocab_size);
    let sampler = Arc::new(NegativeSampler::new(&counts).unwrap());
    let learner: Arc<dyn Learner> = Arc::new(Word2Vec::new(spec.vocab_size, 8, 0));
    let data = Dataset::Sentences { sentences, skipgram: SkipGram { window: 2, negatives: 2, sampler: Some(sampler) } };
    let gl = learner.clone();
    let gen = OperatorSpec::new("gen", OperatorKind::Source, 1, move |info| {
        let c = GeneratorConfig { batch_size: 32, max_batches: Some(48), ..Default::default() };
        Box::new(MiniBatchGenerator::new(info, data.clone(), gl.clone(), c).unwrap())
    });
    let g = build_graph(
        vec![gen, OperatorSpec::model("model", 3, learner, ModelConfig { alpha: 2.0, ..Default::default() })],
        vec![EdgeSpec::new("gen", "model", Routing::hash()), EdgeSpec::new("model", "model", Routing::Broadcast)],
    )
    .unwrap();
    let opts = RunOptions { mode: Mode::Ssp(2), executor: Executor::deterministic(5), ..Default::default() };
    let report = run_graph(&g, opts).unwrap().join().unwrap();
    let models = report.model_reports();
    let finals = models[0].clock.clone();
    for m in &models {
        assert_eq!(m.clock, finals);
        assert_eq!(m.clock.total(), 48);
        let me = m.rank.index();
        for (j, c) in m.barrier_clocks.iter().enumerate() {
            let t = c.as_slice()[me];
            assert_eq!(t, 2 * (j as u64 + 1));
            for (p, &v) in c.as_slice().iter().enumerate() {
                if p != me {
                    assert_eq!(v, finals.as_slice()[p].min(t), "rank {me} barrier {j}: {c:?}");
                }
            }
        }
    }
}
