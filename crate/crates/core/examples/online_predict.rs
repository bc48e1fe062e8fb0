//! Prediction requests interleaved with training; answers are sent straight
//! back to the requesting operator via `reply_to`.

use std::sync::Arc;

use airflux::dataflow::{
    build_graph, run_graph, Context, Control, EdgeSpec, EngineError, Endpoint, Executor, Message, Operator,
    OperatorKind, OperatorOutput, OperatorSpec, Payload, PredictInput, PredictRequest, Routing, RunOptions,
};
use airflux::datasets::{gaussian_blobs, BlobSpec};
use airflux::learners::{DenseClassifier, Learner, TrainingPair};
use airflux::model::ModelConfig;
use airflux::stream::{Dataset, GeneratorConfig, MiniBatchGenerator, Passes};

/// Asks one question per step, collects the answers, then signals end-of-stream.
struct Client {
    me: Endpoint,
    queries: Vec<(Vec<f32>, u32)>,
    next: usize,
    answers: Vec<(u64, u32, u32)>,
    done: bool,
}

impl Operator for Client {
    fn on_message(&mut self, msg: Message, _ctx: &mut Context<'_>) -> Result<(), EngineError> {
        match msg.payload {
            Payload::Prediction(p) => {
                let argmax = p.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i as u32);
                let truth = self.queries[p.request_id as usize].1;
                self.answers.push((p.request_id, argmax, truth));
            }
            Payload::Control(Control::Stop) => self.done = true,
            _ => {}
        }
        Ok(())
    }

    fn has_work(&self) -> bool {
        self.next <= self.queries.len() && !self.done
    }

    fn step(&mut self, ctx: &mut Context<'_>) -> Result<(), EngineError> {
        if self.next == self.queries.len() {
            ctx.emit_end_of_stream();
        } else {
            let (x, _) = &self.queries[self.next];
            let req = PredictRequest { request_id: self.next as u64, input: PredictInput::Features(x.clone()), reply_to: Some(self.me) };
            ctx.emit(Payload::PredictRequest(req));
        }
        self.next += 1;
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done || (self.next > self.queries.len() && self.answers.len() == self.queries.len())
    }

    fn finish(self: Box<Self>) -> OperatorOutput {
        let correct = self.answers.iter().filter(|(_, a, t)| a == t).count();
        println!("client got {} answers, {correct} correct", self.answers.len());
        OperatorOutput::None
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = gaussian_blobs(&BlobSpec { samples: 4096, ..Default::default() });
    let queries: Vec<(Vec<f32>, u32)> = pairs[..200]
        .iter()
        .map(|p| match p {
            TrainingPair::Labeled { features, label } => (features.clone(), *label),
            _ => unreachable!(),
        })
        .collect();
    let data = Dataset::Pairs(Arc::new(pairs));
    let learner: Arc<dyn Learner> = Arc::new(DenseClassifier::new(8, Some(16), 4, 0));

    let gl = learner.clone();
    let ops = vec![
        OperatorSpec::new("generator", OperatorKind::Source, 1, move |info| {
            let c = GeneratorConfig { batch_size: 16, passes: Passes::Finite(1), ..Default::default() };
            Box::new(MiniBatchGenerator::new(info, data.clone(), gl.clone(), c).expect("generator"))
        }),
        OperatorSpec::new("client", OperatorKind::Source, 1, move |info| {
            let me = info.endpoint;
            Box::new(Client { me, queries: queries.clone(), next: 0, answers: Vec::new(), done: false })
        }),
        OperatorSpec::model("model", 3, learner, ModelConfig { alpha: 0.3, ..Default::default() }),
    ];
    let edges = vec![
        EdgeSpec::new("generator", "model", Routing::hash()),
        EdgeSpec::new("client", "model", Routing::hash()),
        EdgeSpec::new("model", "model", Routing::Broadcast),
    ];
    let graph = build_graph(ops, edges)?;
    let report = run_graph(&graph, RunOptions { executor: Executor::deterministic(2), ..Default::default() })?.join()?;
    for m in report.model_reports() {
        println!("rank {} answered {} requests", m.rank.0, m.predictions);
    }
    Ok(())
}
