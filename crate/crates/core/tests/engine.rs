use std::sync::Arc;

use airflux::dataflow::{
    build_graph, run_graph, EdgeSpec, Executor, Mode, OperatorKind, OperatorSpec, Routing, RunOptions, RunReport,
};
use airflux::datasets::{dyadic_pairs, BlobSpec, gaussian_blobs};
use airflux::learners::{Learner, Linear, DenseClassifier};
use airflux::model::{verify_staleness, ModelConfig, ModelReport};
use airflux::stream::{Dataset, GeneratorConfig, MiniBatchGenerator, Passes};

fn pipeline(
    learner: Arc<dyn Learner>,
    data: Dataset,
    n: u32,
    batch: usize,
    cfg: ModelConfig,
) -> airflux::DataflowGraph {
    let gl = learner.clone();
    let gen = OperatorSpec::new("gen", OperatorKind::Source, 1, move |info| {
        let c = GeneratorConfig { batch_size: batch, passes: Passes::Finite(1), ..Default::default() };
        Box::new(MiniBatchGenerator::new(info, data.clone(), gl.clone(), c).unwrap())
    });
    build_graph(
        vec![gen, OperatorSpec::model("model", n, learner, cfg)],
        vec![EdgeSpec::new("gen", "model", Routing::hash()), EdgeSpec::new("model", "model", Routing::Broadcast)],
    )
    .unwrap()
}

fn run(g: &airflux::DataflowGraph, mode: Mode, executor: Executor) -> RunReport {
    let opts = RunOptions { mode, executor, ..Default::default() };
    run_graph(g, opts).unwrap().join().unwrap()
}

fn reports(r: &RunReport) -> Vec<&ModelReport> {
    let mut v = r.model_reports();
    v.sort_by_key(|m| m.rank);
    v
}

fn linear_graph(n: u32, seed: u64) -> airflux::DataflowGraph {
    let data = Dataset::Pairs(Arc::new(dyadic_pairs(512, 6, seed)));
    let cfg = ModelConfig { alpha: 0.0625, max_grad_buffer: 2, ..Default::default() };
    pipeline(Arc::new(Linear::new(6)), data, n, 8, cfg)
}

fn check_aligned(r: &RunReport, n: usize) {
    let reps = reports(r);
    assert_eq!(reps.len(), n);
    for m in &reps {
        assert_eq!(m.clock, reps[0].clock);
        assert_eq!(m.params, reps[0].params);
        assert_eq!(m.apply_log.len() as u64, m.clock.total());
    }
    assert_eq!(reps[0].clock.total(), 64);
    assert_eq!(r.total_sent(), r.total_received() + r.total_dropped());
    assert_eq!(r.total_dropped(), 0);
    assert_eq!(r.total_seq_gaps(), 0);
    let logs: Vec<_> = reps.iter().map(|m| m.staleness.clone()).collect();
    assert_eq!(verify_staleness(&logs).unwrap(), 64 * n);
}

#[test]
fn deterministic_asgd_aligns_replicas() {
    for n in 1..=4 {
        let r = run(&linear_graph(n, 3), Mode::Asgd, Executor::deterministic(7));
        check_aligned(&r, n as usize);
    }
}

#[test]
fn threaded_asgd_aligns_replicas() {
    let r = run(&linear_graph(3, 5), Mode::Asgd, Executor::Threads);
    check_aligned(&r, 3);
}

#[test]
fn deterministic_runs_replay_identically() {
    let exec = airflux::Executor::Deterministic { seed: 11, link_latency_ns: 500, jitter: 0.3, record_trace: true };
    let a = run(&linear_graph(4, 1), Mode::Asgd, exec.clone());
    let b = run(&linear_graph(4, 1), Mode::Asgd, exec);
    assert!(!a.trace.is_empty());
    assert_eq!(a.trace, b.trace);
    let c = run(
        &linear_graph(4, 1),
        Mode::Asgd,
        airflux::Executor::Deterministic { seed: 12, link_latency_ns: 500, jitter: 0.3, record_trace: true },
    );
    assert_ne!(a.trace, c.trace);
}

#[test]
fn ssp_rounds_equalize_clocks() {
    for k in [1u64, 3] {
        for n in [2u32, 3] {
            let r = run(&linear_graph(n, 2), Mode::Ssp(k), Executor::deterministic(3));
            let reps = reports(&r);
            let rounds = reps.iter().map(|m| m.barrier_clocks.len()).min().unwrap();
            assert!(rounds > 0);
            for i in 0..rounds {
                for m in &reps {
                    assert_eq!(m.barrier_clocks[i], reps[0].barrier_clocks[i], "k={k} n={n} round {i}");
                }
            }
            let max = reps.iter().flat_map(|m| m.staleness.iter().map(|s| s.staleness)).max().unwrap();
            assert!(max <= 2 * k * (u64::from(n) - 1), "k={k} n={n} max={max}");
        }
    }
}

#[test]
fn dense_classifier_trains_across_ranks() {
    let data = Dataset::Pairs(Arc::new(gaussian_blobs(&BlobSpec { samples: 2048, ..Default::default() })));
    let learner = Arc::new(DenseClassifier::new(8, Some(16), 4, 1));
    let cfg = ModelConfig { alpha: 0.05, ..Default::default() };
    let r = run(&pipeline(learner, data, 4, 16, cfg), Mode::Asgd, Executor::deterministic(1));
    let mut losses: Vec<_> = reports(&r).iter().flat_map(|m| m.losses.clone()).collect();
    losses.sort_by_key(|l| l.batch_id);
    assert_eq!(losses.len(), 128);
    let head: f64 = losses[..20].iter().map(|l| l.loss).sum::<f64>() / 20.0;
    let tail: f64 = losses[108..].iter().map(|l| l.loss).sum::<f64>() / 20.0;
    assert!(tail < head, "{head} -> {tail}");
}
