use std::time::{Duration, Instant};

use super::{Endpoint, EngineError, Message, OperatorId, Payload, RankId, Topology};
use crate::model::ModelReport;

/// Behaviour of one operator instance.
///
/// The executor calls [`Operator::on_message`] for every delivered message and
/// [`Operator::step`] whenever [`Operator::has_work`] is true. Messages and
/// steps of one instance never run concurrently.
pub trait Operator: Send {
    fn on_message(&mut self, msg: Message, ctx: &mut Context<'_>) -> Result<(), EngineError>;

    /// Whether the instance is ready to take another message from a data
    /// (non-peer) channel. Returning false leaves it queued, which is how
    /// backpressure reaches upstream operators.
    fn wants_data(&self) -> bool {
        true
    }

    fn has_work(&self) -> bool {
        false
    }

    fn step(&mut self, _ctx: &mut Context<'_>) -> Result<(), EngineError> {
        Ok(())
    }

    /// Waiting on peers at a synchronization barrier.
    fn blocked_on_barrier(&self) -> bool {
        false
    }

    fn is_done(&self) -> bool;

    fn finish(self: Box<Self>) -> OperatorOutput;
}

/// What an instance hands back when the run completes.
#[derive(Debug)]
pub enum OperatorOutput {
    None,
    Model(Box<ModelReport>),
    Collected(Vec<Payload>),
    Source { batches: u64, events: u64 },
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum TimeBase {
    Wall(Instant),
    Virtual(u64),
}

/// Per-invocation handle through which an operator reads the clock and sends messages.
pub struct Context<'a> {
    me: Endpoint,
    topology: &'a Topology,
    time: TimeBase,
    charged: u64,
    scale: f64,
    outbox: Vec<(Endpoint, Payload)>,
}

impl<'a> Context<'a> {
    pub(crate) fn new(me: Endpoint, topology: &'a Topology, time: TimeBase) -> Self {
        Self {
            me,
            topology,
            time,
            charged: 0,
            scale: 1.0,
            outbox: Vec::new(),
        }
    }

    pub fn me(&self) -> Endpoint {
        self.me
    }

    pub fn rank(&self) -> RankId {
        self.me.rank
    }

    pub fn topology(&self) -> &Topology {
        self.topology
    }

    /// Nanoseconds since the start of the run (virtual under the deterministic executor).
    pub fn now_ns(&self) -> u64 {
        match self.time {
            TimeBase::Wall(origin) => origin.elapsed().as_nanos() as u64,
            TimeBase::Virtual(t) => t + self.charged,
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self.time, TimeBase::Virtual(_))
    }

    /// Accounts `ns` of simulated work. No effect on wall-clock runs.
    pub fn charge(&mut self, ns: u64) {
        if self.is_virtual() {
            self.charged += (ns as f64 * self.scale).round() as u64;
        }
    }

    /// Blocks (or advances virtual time) until `t_ns`.
    pub fn wait_until(&mut self, t_ns: u64) {
        match self.time {
            TimeBase::Wall(origin) => {
                let now = origin.elapsed().as_nanos() as u64;
                if t_ns > now {
                    std::thread::sleep(Duration::from_nanos(t_ns - now));
                }
            }
            TimeBase::Virtual(base) => {
                if t_ns > base + self.charged {
                    self.charged = t_ns - base;
                }
            }
        }
    }

    pub(crate) fn set_charge_scale(&mut self, scale: f64) {
        self.scale = scale;
    }

    pub(crate) fn charged(&self) -> u64 {
        self.charged
    }

    pub fn send(&mut self, dest: Endpoint, payload: Payload) {
        self.outbox.push((dest, payload));
    }

    /// Sends along every out-edge of this operator according to its routing.
    pub fn emit(&mut self, payload: Payload) {
        let edges = self.topology.out_edges(self.me.operator);
        for (to, routing) in edges {
            if *to == self.me.operator {
                continue;
            }
            for dest in self.topology.route(self.me, *to, routing, &payload) {
                self.outbox.push((dest, payload.clone()));
            }
        }
    }

    /// Like [`Context::emit`] but only along edges into operator `to`.
    pub fn emit_to(&mut self, to: OperatorId, payload: Payload) {
        let edges = self.topology.out_edges(self.me.operator);
        for (target, routing) in edges.iter().filter(|(t, _)| *t == to) {
            for dest in self.topology.route(self.me, *target, routing, &payload) {
                self.outbox.push((dest, payload.clone()));
            }
        }
    }

    /// Every other instance of this operator.
    pub fn peers(&self) -> impl Iterator<Item = Endpoint> + '_ {
        let n = self.topology.instances(self.me.operator);
        let me = self.me;
        (0..n)
            .map(move |r| Endpoint::new(me.operator, RankId(r)))
            .filter(move |e| *e != me)
    }

    /// Delivers `payload` to every other instance of this operator.
    pub fn broadcast_to_peers(&mut self, payload: Payload) {
        let peers: Vec<_> = self.peers().collect();
        for p in peers {
            self.outbox.push((p, payload.clone()));
        }
    }

    /// One end-of-stream marker to every downstream instance (self-edges excluded).
    pub fn emit_end_of_stream(&mut self) {
        let edges = self.topology.out_edges(self.me.operator);
        for (to, _) in edges {
            if *to == self.me.operator {
                continue;
            }
            for r in 0..self.topology.instances(*to) {
                self.outbox.push((
                    Endpoint::new(*to, RankId(r)),
                    Payload::Control(super::Control::EndOfStream),
                ));
            }
        }
    }

    pub(crate) fn take_outbox(&mut self) -> Vec<(Endpoint, Payload)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn pending_sends(&self) -> usize {
        self.outbox.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{build_graph, Control, EdgeSpec, OperatorKind, OperatorSpec, Routing};

    struct Nop;
    impl Operator for Nop {
        fn on_message(&mut self, _: Message, _: &mut Context<'_>) -> Result<(), EngineError> {
            Ok(())
        }
        fn is_done(&self) -> bool {
            true
        }
        fn finish(self: Box<Self>) -> OperatorOutput {
            OperatorOutput::None
        }
    }

    fn model_topology(n: u32) -> Topology {
        build_graph(
            vec![OperatorSpec::new("m", OperatorKind::Model, n, |_| Box::new(Nop))],
            vec![EdgeSpec::new("m", "m", Routing::Broadcast)],
        )
        .unwrap()
        .topology()
    }

    #[test]
    fn broadcast_to_peers_skips_self() {
        let t = model_topology(4);
        let me = Endpoint::new(OperatorId(0), RankId(2));
        let mut ctx = Context::new(me, &t, TimeBase::Virtual(0));
        ctx.broadcast_to_peers(Payload::Control(Control::Stop));
        let ranks: Vec<u32> = ctx.take_outbox().iter().map(|(e, _)| e.rank.0).collect();
        assert_eq!(ranks, vec![0, 1, 3]);
    }

    #[test]
    fn single_rank_broadcast_reaches_nobody() {
        let t = model_topology(1);
        let mut ctx = Context::new(Endpoint::new(OperatorId(0), RankId(0)), &t, TimeBase::Virtual(0));
        ctx.broadcast_to_peers(Payload::Control(Control::Stop));
        assert_eq!(ctx.pending_sends(), 0);
    }

    #[test]
    fn virtual_time_advances_by_charge_and_wait() {
        let t = model_topology(1);
        let mut ctx = Context::new(Endpoint::new(OperatorId(0), RankId(0)), &t, TimeBase::Virtual(100));
        ctx.charge(50);
        assert_eq!(ctx.now_ns(), 150);
        ctx.wait_until(120);
        assert_eq!(ctx.now_ns(), 150);
        ctx.wait_until(400);
        assert_eq!(ctx.now_ns(), 400);
    }
}
