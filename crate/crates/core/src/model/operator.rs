use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{GradientUpdate, ModelError, ModelReplica, StalenessRecord, VectorClock};
use crate::dataflow::{
    Context, Control, Endpoint, EngineError, InstanceInfo, Message, Mode, Operator, OperatorKind, OperatorOutput,
    OperatorSpec, Payload, PredictRequest, Prediction, RankId,
};
use crate::learners::{Learner, ParamStore};
use crate::stream::MiniBatch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Learning rate used for local and remote gradients alike.
    pub alpha: f64,
    /// Local gradients buffered before they are broadcast.
    pub max_grad_buffer: usize,
    /// Mini-batches and prediction requests a replica pulls ahead of processing.
    pub pending_capacity: usize,
    /// Keep a fingerprint of the parameters after every application.
    pub record_trajectory: bool,
    /// Reserved for staleness-aware step sizes on remote gradients. Accepted
    /// and carried through configs but not applied: every gradient uses `alpha`.
    pub staleness_decay: Option<f64>,
    /// Starting parameters; the learner's own initialization when absent.
    #[serde(skip)]
    pub init: Option<Arc<ParamStore<f32>>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { alpha: 0.01, max_grad_buffer: 1, pending_capacity: 2, record_trajectory: false, staleness_decay: None, init: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub batch_id: u64,
    pub rank: u32,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchLatency {
    pub batch_id: u64,
    pub events: u64,
    /// Ingestion timestamp of the batch's last event.
    pub created_ts: u64,
    /// Time the batch's gradient was applied on the computing replica.
    pub applied_ts: u64,
}

impl BatchLatency {
    pub fn latency_ns(&self) -> u64 {
        self.applied_ts.saturating_sub(self.created_ts)
    }
}

/// State handed back by a model replica at the end of a run.
#[derive(Clone, Debug)]
pub struct ModelReport {
    pub rank: RankId,
    pub params: ParamStore<f32>,
    pub clock: VectorClock,
    pub local_seq: u64,
    /// One record per application, local ones included (staleness 0).
    pub staleness: Vec<StalenessRecord>,
    /// `(origin, origin_seq)` of every applied gradient, in application order.
    pub apply_log: Vec<(u32, u64)>,
    pub losses: Vec<LossPoint>,
    pub latencies: Vec<BatchLatency>,
    pub trajectory: Vec<u64>,
    /// Clock at the moment each synchronization barrier was released.
    pub barrier_clocks: Vec<VectorClock>,
    pub gradients_sent: u64,
    pub predictions: u64,
    pub rejected: u64,
    pub stopped: bool,
}

impl OperatorSpec {
    /// A replicated model operator with `n` ranks.
    pub fn model(name: impl Into<String>, n: u32, learner: Arc<dyn Learner>, config: ModelConfig) -> Self {
        OperatorSpec::new(name, OperatorKind::Model, n, move |info: &InstanceInfo| {
            Box::new(ModelOperator::new(info, learner.clone(), config.clone())) as Box<dyn Operator>
        })
    }
}

/// Replica operator: trains on routed mini-batches, applies peer gradients,
/// answers prediction requests.
///
/// Queued work is served in priority order: peer gradients, then
/// predictions, then mini-batches. Under `Mode::Ssp(k)` a replica stops after
/// every `k` local gradients until each peer has reached the same round and
/// all of the peers' gradients up to that round are applied.
pub struct ModelOperator {
    replica: ModelReplica,
    config: ModelConfig,
    round_size: Option<u64>,
    n: usize,
    grads: VecDeque<Arc<GradientUpdate>>,
    deferred: VecDeque<Arc<GradientUpdate>>,
    batches: VecDeque<Arc<MiniBatch>>,
    predicts: VecDeque<PredictRequest>,
    upstream: u32,
    eos_seen: u32,
    done_sent: bool,
    peer_done: Vec<Option<u64>>,
    peer_round: Vec<u64>,
    round: u64,
    in_round: u64,
    blocked: bool,
    stopped: bool,
    report: ModelReport,
}

impl ModelOperator {
    pub fn new(info: &InstanceInfo, learner: Arc<dyn Learner>, config: ModelConfig) -> Self {
        let n = info.instances as usize;
        let mut replica = ModelReplica::new(info.rank(), info.instances, learner, config.alpha, config.max_grad_buffer);
        if let Some(p) = &config.init {
            replica.set_params(p.as_ref().clone());
        }
        let report = ModelReport {
            rank: info.rank(),
            params: ParamStore::new(),
            clock: VectorClock::new(n),
            local_seq: 0,
            staleness: Vec::new(),
            apply_log: Vec::new(),
            losses: Vec::new(),
            latencies: Vec::new(),
            trajectory: Vec::new(),
            barrier_clocks: Vec::new(),
            gradients_sent: 0,
            predictions: 0,
            rejected: 0,
            stopped: false,
        };
        Self {
            replica,
            round_size: match info.mode {
                Mode::Ssp(k) => Some(k),
                _ => None,
            },
            config,
            n,
            grads: VecDeque::new(),
            deferred: VecDeque::new(),
            batches: VecDeque::new(),
            predicts: VecDeque::new(),
            upstream: info.upstream,
            eos_seen: 0,
            done_sent: false,
            peer_done: vec![None; n],
            peer_round: vec![0; n],
            round: 1,
            in_round: 0,
            blocked: false,
            stopped: false,
            report,
        }
    }

    fn me(&self) -> usize {
        self.replica.rank().index()
    }

    fn upstream_done(&self) -> bool {
        self.eos_seen >= self.upstream
    }

    fn ready_to_finish(&self) -> bool {
        !self.done_sent && !self.blocked && self.batches.is_empty() && self.upstream_done()
    }

    fn round_of(&self, g: &GradientUpdate) -> u64 {
        match self.round_size {
            Some(k) => (g.origin_seq - 1) / k + 1,
            None => 1,
        }
    }

    fn record(&mut self, rec: StalenessRecord) {
        self.report.apply_log.push((rec.origin, rec.origin_seq));
        self.report.staleness.push(rec);
        if self.config.record_trajectory {
            self.report.trajectory.push(self.replica.theta().fingerprint());
        }
    }

    fn broadcast(&mut self, ctx: &mut Context<'_>, grads: Vec<Arc<GradientUpdate>>) {
        for g in grads {
            self.report.gradients_sent += self.n as u64 - 1;
            ctx.broadcast_to_peers(Payload::Gradient(g));
        }
    }

    fn apply_remote(&mut self, ctx: &mut Context<'_>, g: Arc<GradientUpdate>) -> Result<(), EngineError> {
        ctx.charge(apply_cost(&g));
        let rec = self.replica.apply_gradient(&g, ctx.now_ns())?;
        self.record(rec);
        Ok(())
    }

    fn serve(&mut self, ctx: &mut Context<'_>, req: PredictRequest) -> Result<(), EngineError> {
        ctx.charge(self.replica.learner().gradient_cost_ns(1) / 4);
        let values = self.replica.predict(&req.input)?;
        let p = Payload::Prediction(Prediction { request_id: req.request_id, values, served_by: self.replica.rank() });
        match req.reply_to {
            Some(dest) => ctx.send(dest, p),
            None => ctx.emit(p),
        }
        self.report.predictions += 1;
        Ok(())
    }

    fn train(&mut self, ctx: &mut Context<'_>, batch: Arc<MiniBatch>) -> Result<(), EngineError> {
        let learner = self.replica.learner().clone();
        ctx.charge(learner.gradient_cost_ns(batch.pairs.len()));
        let step = self.replica.train_local(batch.id, &batch.pairs, 0)?;
        ctx.charge(apply_cost(&step.update));
        let now = ctx.now_ns();
        let mut rec = step.record;
        rec.wall_ts = now;
        self.record(rec);
        self.report.losses.push(LossPoint { batch_id: batch.id, rank: self.replica.rank().0, loss: step.loss });
        self.report.latencies.push(BatchLatency {
            batch_id: batch.id,
            events: batch.pairs.len() as u64,
            created_ts: batch.created_ts,
            applied_ts: now,
        });
        self.broadcast(ctx, step.flushed);
        if let Some(k) = self.round_size {
            self.in_round += 1;
            if self.in_round >= k {
                let rest = self.replica.flush();
                self.broadcast(ctx, rest);
                ctx.broadcast_to_peers(Payload::Control(Control::BarrierReached {
                    round: self.round,
                    local_total: self.replica.local_seq(),
                }));
                self.blocked = true;
            }
        }
        Ok(())
    }

    fn finish_local(&mut self, ctx: &mut Context<'_>) {
        let rest = self.replica.flush();
        self.broadcast(ctx, rest);
        ctx.broadcast_to_peers(Payload::Control(Control::PeerDone { local_total: self.replica.local_seq() }));
        ctx.emit_end_of_stream();
        self.done_sent = true;
        // No more local rounds: later-round gradients can be applied right away.
        let deferred = std::mem::take(&mut self.deferred);
        self.grads.extend(deferred);
    }

    /// Leaves the barrier once every peer has finished the current round (or
    /// its stream) and all of their gradients up to that point are applied.
    fn try_release(&mut self) {
        if !self.blocked {
            return;
        }
        let k = self.round_size.expect("blocked outside ssp");
        let target = self.round * k;
        let clock = self.replica.clock();
        let me = self.me();
        let ready = (0..self.n).filter(|&p| p != me).all(|p| {
            let reached = self.peer_round[p] >= self.round || self.peer_done[p].is_some();
            let expect = self.peer_done[p].map_or(target, |t| t.min(target));
            reached && clock.as_slice()[p] == expect
        });
        if !ready {
            return;
        }
        self.report.barrier_clocks.push(clock.clone());
        self.blocked = false;
        self.round += 1;
        self.in_round = 0;
        let round = self.round;
        let (now, later): (VecDeque<_>, VecDeque<_>) =
            std::mem::take(&mut self.deferred).into_iter().partition(|g| self.round_of(g) <= round);
        self.grads.extend(now);
        self.deferred = later;
    }

    fn on_control(&mut self, sender: Endpoint, c: Control) {
        match c {
            Control::EndOfStream => self.eos_seen += 1,
            Control::Stop => {
                self.stopped = true;
                self.replica.stop();
            }
            Control::BarrierReached { round, .. } => {
                let p = sender.rank.index();
                self.peer_round[p] = self.peer_round[p].max(round);
            }
            Control::PeerDone { local_total } => self.peer_done[sender.rank.index()] = Some(local_total),
        }
    }
}

fn apply_cost(g: &GradientUpdate) -> u64 {
    100 + g.delta.nnz() as u64
}

impl Operator for ModelOperator {
    fn on_message(&mut self, msg: Message, _ctx: &mut Context<'_>) -> Result<(), EngineError> {
        if self.stopped {
            self.report.rejected += 1;
            return Ok(());
        }
        match msg.payload {
            Payload::MiniBatch(b) => self.batches.push_back(b),
            Payload::Gradient(g) => {
                if !self.done_sent && self.round_of(&g) > self.round {
                    self.deferred.push_back(g);
                } else {
                    self.grads.push_back(g);
                }
            }
            Payload::PredictRequest(r) => self.predicts.push_back(r),
            Payload::Control(c) => self.on_control(msg.sender, c),
            other => return Err(ModelError::UnknownMessageKind(other.kind()).into()),
        }
        self.try_release();
        Ok(())
    }

    fn wants_data(&self) -> bool {
        !self.stopped && (self.blocked || self.batches.len() + self.predicts.len() < self.config.pending_capacity)
    }

    fn has_work(&self) -> bool {
        !self.stopped
            && (!self.grads.is_empty()
                || !self.predicts.is_empty()
                || (!self.blocked && !self.batches.is_empty())
                || self.ready_to_finish())
    }

    fn step(&mut self, ctx: &mut Context<'_>) -> Result<(), EngineError> {
        if let Some(g) = self.grads.pop_front() {
            self.apply_remote(ctx, g)?;
        } else if let Some(r) = self.predicts.pop_front() {
            self.serve(ctx, r)?;
        } else if !self.blocked && !self.batches.is_empty() {
            let b = self.batches.pop_front().expect("nonempty");
            self.train(ctx, b)?;
        } else if self.ready_to_finish() {
            self.finish_local(ctx);
        }
        self.try_release();
        Ok(())
    }

    fn blocked_on_barrier(&self) -> bool {
        self.blocked
    }

    fn is_done(&self) -> bool {
        if self.stopped {
            return true;
        }
        let me = self.me();
        self.done_sent
            && self.grads.is_empty()
            && self.deferred.is_empty()
            && self.predicts.is_empty()
            && (0..self.n)
                .filter(|&p| p != me)
                .all(|p| self.peer_done[p] == Some(self.replica.clock().as_slice()[p]))
    }

    fn finish(self: Box<Self>) -> OperatorOutput {
        let mut report = self.report;
        report.clock = self.replica.clock().clone();
        report.local_seq = self.replica.local_seq();
        report.stopped = self.stopped;
        report.params = self.replica.into_theta();
        OperatorOutput::Model(Box::new(report))
    }
}
