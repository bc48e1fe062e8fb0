//! One-call training runs: a generator feeding a replicated model.

use std::sync::Arc;
use std::time::Duration;

use crate::dataflow::{
    build_graph, run_graph, EdgeSpec, EngineError, Executor, Mode, OperatorKind, OperatorSpec, Routing, RunOptions,
    RunReport,
};
use crate::learners::{Learner, ParamStore};
use crate::model::{BatchLatency, LossPoint, ModelConfig, ModelReport, StalenessRecord};
use crate::stream::{Dataset, GeneratorConfig, MiniBatchGenerator};

/// A generator → model(n) pipeline with all-to-all gradient exchange.
#[derive(Clone)]
pub struct TrainJob {
    pub learner: Arc<dyn Learner>,
    pub dataset: Dataset,
    pub n_ranks: u32,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub mode: Mode,
    pub executor: Executor,
    pub queue_capacity: usize,
    pub stop_after: Option<Duration>,
}

impl TrainJob {
    pub fn new(learner: Arc<dyn Learner>, dataset: Dataset, n_ranks: u32) -> Self {
        Self {
            learner,
            dataset,
            n_ranks,
            generator: GeneratorConfig::default(),
            model: ModelConfig::default(),
            mode: Mode::Asgd,
            executor: Executor::Threads,
            queue_capacity: 1024,
            stop_after: None,
        }
    }

    pub fn graph(&self) -> Result<crate::DataflowGraph, EngineError> {
        let learner = self.learner.clone();
        let dataset = self.dataset.clone();
        let gcfg = self.generator.clone();
        let gen = OperatorSpec::new("generator", OperatorKind::Source, 1, move |info| {
            match MiniBatchGenerator::new(info, dataset.clone(), learner.clone(), gcfg.clone()) {
                Ok(g) => Box::new(g),
                Err(e) => panic!("generator config: {e}"),
            }
        });
        let model = OperatorSpec::model("model", self.n_ranks, self.learner.clone(), self.model.clone());
        Ok(build_graph(
            vec![gen, model],
            vec![
                EdgeSpec::new("generator", "model", Routing::hash()),
                EdgeSpec::new("model", "model", Routing::Broadcast),
            ],
        )?)
    }

    pub fn run(&self) -> Result<TrainOutcome, EngineError> {
        // Surface generator config errors here instead of inside a context.
        if self.generator.batch_size == 0 {
            return Err(EngineError::Operator("batch size must be positive".into()));
        }
        if self.dataset.is_empty() {
            return Err(EngineError::Operator("dataset is empty".into()));
        }
        let graph = self.graph()?;
        let opts = RunOptions {
            mode: self.mode,
            executor: self.executor.clone(),
            queue_capacity: self.queue_capacity,
            stop_after: self.stop_after,
            ..Default::default()
        };
        let report = run_graph(&graph, opts)?.join()?;
        Ok(TrainOutcome::from_report(report))
    }
}

/// Result of a [`TrainJob`].
#[derive(Debug)]
pub struct TrainOutcome {
    /// Replica reports ordered by rank.
    pub models: Vec<ModelReport>,
    pub elapsed_ns: u64,
    pub stopped: bool,
    pub sent: u64,
    pub received: u64,
    pub dropped: u64,
    pub seq_gaps: u64,
}

impl TrainOutcome {
    pub fn from_report(report: RunReport) -> Self {
        let (sent, received, dropped, seq_gaps) =
            (report.total_sent(), report.total_received(), report.total_dropped(), report.total_seq_gaps());
        let elapsed_ns = report.elapsed_ns;
        let stopped = report.stopped;
        let mut models = report.into_model_reports();
        models.sort_by_key(|m| m.rank);
        Self { models, elapsed_ns, stopped, sent, received, dropped, seq_gaps }
    }

    /// Per-batch losses of all replicas merged by batch id.
    pub fn loss_curve(&self) -> Vec<LossPoint> {
        let mut v: Vec<LossPoint> = self.models.iter().flat_map(|m| m.losses.iter().copied()).collect();
        v.sort_by_key(|p| p.batch_id);
        v
    }

    pub fn staleness_logs(&self) -> Vec<Vec<StalenessRecord>> {
        self.models.iter().map(|m| m.staleness.clone()).collect()
    }

    pub fn latencies(&self) -> Vec<BatchLatency> {
        let mut v: Vec<BatchLatency> = self.models.iter().flat_map(|m| m.latencies.iter().copied()).collect();
        v.sort_by_key(|l| l.batch_id);
        v
    }

    /// Training examples consumed by all replicas.
    pub fn examples(&self) -> u64 {
        self.models.iter().flat_map(|m| m.latencies.iter()).map(|l| l.events).sum()
    }

    pub fn examples_per_sec(&self) -> f64 {
        if self.elapsed_ns == 0 {
            return 0.0;
        }
        self.examples() as f64 * 1e9 / self.elapsed_ns as f64
    }

    /// Parameters of the lowest rank.
    pub fn params(&self) -> &ParamStore<f32> {
        &self.models[0].params
    }

    /// Mean loss over the last `k` batches of the merged curve.
    pub fn tail_loss(&self, k: usize) -> f64 {
        tail_mean(&self.loss_curve(), k)
    }
}

pub fn tail_mean(curve: &[LossPoint], k: usize) -> f64 {
    let tail = &curve[curve.len().saturating_sub(k)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|p| p.loss).sum::<f64>() / tail.len() as f64
}

/// Plain sequential SGD over the batches a single generator would emit.
///
/// Returns the loss of every batch and the final parameters.
pub fn sequential_sgd(
    learner: &dyn Learner,
    batches: &[crate::MiniBatch],
    alpha: f64,
    init: Option<ParamStore<f32>>,
) -> Result<(Vec<LossPoint>, ParamStore<f32>), crate::learners::LearnerError> {
    let mut theta = init.unwrap_or_else(|| learner.init_params());
    let a = alpha as f32;
    let mut losses = Vec::with_capacity(batches.len());
    for b in batches {
        let (loss, delta) = learner.loss_and_gradient(&theta, &b.pairs)?;
        crate::model::apply_delta(theta.as_mut_slice(), &delta, a).expect("delta matches learner layout");
        losses.push(LossPoint { batch_id: b.id, rank: 0, loss });
    }
    Ok((losses, theta))
}
