//! Deterministic discrete-event executor.
//!
//! Every context carries its own virtual clock. Operators charge virtual
//! nanoseconds for their work through [`Context::charge`]; messages become
//! visible to the receiver `link_latency_ns` after the sending step ends. At
//! each iteration the context with the earliest ready time runs one step;
//! ties are broken by a seeded RNG.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{DataflowGraph, InstanceInfo, Topology};
use super::operator::{Context, Operator, OperatorOutput, TimeBase};
use super::runtime::{ContextReport, Delivery, EngineError, Executor, RunOptions, RunReport};
use super::{ChannelClosed, Control, Endpoint, Message, Payload};

struct Chan {
    from: Option<usize>,
    to: usize,
    peer: bool,
    queue: VecDeque<(u64, Message)>,
    next_seq: u64,
}

struct SimCtx {
    me: Endpoint,
    op: Option<Box<dyn Operator>>,
    vtime: u64,
    resume_at: u64,
    done: bool,
    inbound: Vec<usize>,
    outbound_data: Vec<usize>,
    sent_to: BTreeMap<Endpoint, u64>,
    received_from: BTreeMap<Endpoint, u64>,
    expected: HashMap<Endpoint, u64>,
    dropped: u64,
    seq_gaps: u64,
    output: Option<OperatorOutput>,
}

impl SimCtx {
    fn op(&self) -> &dyn Operator {
        self.op.as_deref().expect("operator present until finished")
    }
}

struct Sim {
    topology: Arc<Topology>,
    ctxs: Vec<SimCtx>,
    index: HashMap<Endpoint, usize>,
    chans: Vec<Chan>,
    chan_index: HashMap<(Option<usize>, usize), usize>,
    capacity: usize,
    latency: u64,
    jitter: f64,
    rng: ChaCha8Rng,
    trace: Option<Vec<Delivery>>,
}

pub(crate) fn run(graph: &DataflowGraph, topology: Arc<Topology>, opts: &RunOptions) -> Result<RunReport, EngineError> {
    let Executor::Deterministic { seed, link_latency_ns, jitter, record_trace } = opts.executor else {
        unreachable!("sim::run called for a non-deterministic executor");
    };
    let mut ctxs = Vec::new();
    let mut index = HashMap::new();
    for ep in topology.endpoints() {
        let spec = &graph.operators()[ep.operator.0 as usize];
        let info = InstanceInfo {
            endpoint: ep,
            instances: spec.instance_count,
            mode: opts.mode,
            upstream: topology.upstream_instances(ep.operator),
        };
        index.insert(ep, ctxs.len());
        ctxs.push(SimCtx {
            me: ep,
            op: Some(spec.instantiate(&info)),
            vtime: 0,
            resume_at: 0,
            done: false,
            inbound: Vec::new(),
            outbound_data: Vec::new(),
            sent_to: BTreeMap::new(),
            received_from: BTreeMap::new(),
            expected: HashMap::new(),
            dropped: 0,
            seq_gaps: 0,
            output: None,
        });
    }
    let mut sim = Sim {
        topology,
        ctxs,
        index,
        chans: Vec::new(),
        chan_index: HashMap::new(),
        capacity: opts.queue_capacity.max(1),
        latency: link_latency_ns,
        jitter: jitter.clamp(0.0, 0.99),
        rng: ChaCha8Rng::seed_from_u64(seed),
        trace: record_trace.then(Vec::new),
    };
    let stop_at = opts.stop_after.map(|d| d.as_nanos() as u64);
    let stopped = sim.run_loop(stop_at)?;
    Ok(sim.into_report(stopped))
}

impl Sim {
    fn run_loop(&mut self, stop_at: Option<u64>) -> Result<bool, EngineError> {
        let mut stopped = false;
        loop {
            let mut best: Option<u64> = None;
            let mut tied = Vec::new();
            for i in 0..self.ctxs.len() {
                if self.ctxs[i].done {
                    continue;
                }
                if let Some(t) = self.ready_time(i) {
                    match best {
                        Some(b) if t > b => {}
                        Some(b) if t == b => tied.push(i),
                        _ => {
                            best = Some(t);
                            tied.clear();
                            tied.push(i);
                        }
                    }
                }
            }
            match best {
                None => {
                    if self.ctxs.iter().all(|c| c.done) {
                        return Ok(stopped);
                    }
                    if let (Some(s), false) = (stop_at, stopped) {
                        self.stop_all(s);
                        stopped = true;
                        continue;
                    }
                    let waiting: Vec<Endpoint> =
                        self.ctxs.iter().filter(|c| !c.done).map(|c| c.me).collect();
                    if let Some(c) = self.ctxs.iter().find(|c| !c.done && c.op().blocked_on_barrier()) {
                        return Err(EngineError::BarrierTimeout {
                            endpoint: c.me,
                            waited: std::time::Duration::ZERO,
                        });
                    }
                    return Err(EngineError::Deadlock(waiting));
                }
                Some(t) => {
                    if let (Some(s), false) = (stop_at, stopped) {
                        if t > s {
                            self.stop_all(s);
                            stopped = true;
                            continue;
                        }
                    }
                    let pick = if tied.len() == 1 {
                        tied[0]
                    } else {
                        tied[self.rng.random_range(0..tied.len())]
                    };
                    self.step(pick, t)?;
                }
            }
        }
    }

    fn throttled(&self, i: usize) -> bool {
        self.ctxs[i]
            .outbound_data
            .iter()
            .any(|&ch| self.chans[ch].queue.len() >= self.capacity)
    }

    fn ready_time(&self, i: usize) -> Option<u64> {
        let c = &self.ctxs[i];
        let op = c.op();
        let mut ready = None;
        if op.has_work() && !self.throttled(i) {
            ready = Some(c.vtime.max(c.resume_at));
        }
        let wants = op.wants_data();
        for &ch in &c.inbound {
            let chan = &self.chans[ch];
            if let Some((arrival, _)) = chan.queue.front() {
                if chan.peer || wants {
                    let t = c.vtime.max(*arrival);
                    ready = Some(ready.map_or(t, |r: u64| r.min(t)));
                }
            }
        }
        ready
    }

    fn next_delivery(&self, i: usize, now: u64) -> Option<usize> {
        let c = &self.ctxs[i];
        let wants = c.op().wants_data();
        let mut best: Option<(u64, usize)> = None;
        for &ch in &c.inbound {
            let chan = &self.chans[ch];
            if let Some((arrival, _)) = chan.queue.front() {
                if *arrival <= now && (chan.peer || wants) && best.is_none_or(|(a, _)| *arrival < a) {
                    best = Some((*arrival, ch));
                }
            }
        }
        best.map(|(_, ch)| ch)
    }

    fn step(&mut self, i: usize, t: u64) -> Result<(), EngineError> {
        let topology = Arc::clone(&self.topology);
        let me = self.ctxs[i].me;
        self.ctxs[i].vtime = t;
        let scale = 1.0 + self.jitter * (self.rng.random::<f64>() * 2.0 - 1.0);
        let mut ctx = Context::new(me, &topology, TimeBase::Virtual(t));
        ctx.set_charge_scale(scale);

        let can_step = !self.throttled(i);
        while let Some(ch) = self.next_delivery(i, t + ctx.charged()) {
            let at_capacity = !self.chans[ch].peer && self.chans[ch].queue.len() >= self.capacity;
            let (_, msg) = self.chans[ch].queue.pop_front().expect("head checked");
            if at_capacity {
                if let Some(from) = self.chans[ch].from {
                    let resume = &mut self.ctxs[from].resume_at;
                    *resume = (*resume).max(t + ctx.charged());
                }
            }
            let c = &mut self.ctxs[i];
            if msg.sender != Endpoint::DRIVER {
                *c.received_from.entry(msg.sender).or_default() += 1;
            }
            let expected = c.expected.entry(msg.sender).or_insert(1);
            if msg.seq != *expected {
                c.seq_gaps += 1;
            }
            *expected = msg.seq + 1;
            if let Some(trace) = &mut self.trace {
                trace.push(Delivery {
                    at_ns: t + ctx.charged(),
                    to: me,
                    from: msg.sender,
                    seq: msg.seq,
                });
            }
            c.op.as_mut().expect("live operator").on_message(msg, &mut ctx)?;
        }

        let op = self.ctxs[i].op.as_mut().expect("live operator");
        if can_step && op.has_work() {
            op.step(&mut ctx)?;
        }
        let end = t + ctx.charged();
        self.ctxs[i].vtime = end;
        for (dest, payload) in ctx.take_outbox() {
            self.enqueue(Some(i), dest, payload, end + self.latency)?;
        }
        if self.ctxs[i].op().is_done() {
            let c = &mut self.ctxs[i];
            c.done = true;
            c.output = Some(c.op.take().expect("live operator").finish());
        }
        Ok(())
    }

    fn enqueue(&mut self, from: Option<usize>, dest: Endpoint, payload: Payload, arrival: u64) -> Result<(), EngineError> {
        let j = *self.index.get(&dest).ok_or(ChannelClosed { dest })?;
        if self.ctxs[j].done {
            return Err(ChannelClosed { dest }.into());
        }
        let ch = match self.chan_index.get(&(from, j)) {
            Some(&ch) => ch,
            None => {
                let sender = from.map_or(Endpoint::DRIVER, |f| self.ctxs[f].me);
                let peer = self.topology.is_peer_channel(sender, dest);
                let ch = self.chans.len();
                self.chans.push(Chan {
                    from,
                    to: j,
                    peer,
                    queue: VecDeque::new(),
                    next_seq: 1,
                });
                self.chan_index.insert((from, j), ch);
                self.ctxs[j].inbound.push(ch);
                if let (Some(f), false) = (from, peer) {
                    self.ctxs[f].outbound_data.push(ch);
                }
                ch
            }
        };
        let sender = from.map_or(Endpoint::DRIVER, |f| self.ctxs[f].me);
        let chan = &mut self.chans[ch];
        let seq = chan.next_seq;
        chan.next_seq += 1;
        chan.queue.push_back((arrival, Message::new(sender, seq, payload)));
        if let Some(f) = from {
            *self.ctxs[f].sent_to.entry(dest).or_default() += 1;
        }
        Ok(())
    }

    fn stop_all(&mut self, at: u64) {
        let topology = Arc::clone(&self.topology);
        for i in 0..self.ctxs.len() {
            if self.ctxs[i].done {
                continue;
            }
            let c = &mut self.ctxs[i];
            c.vtime = c.vtime.max(at);
            let mut ctx = Context::new(c.me, &topology, TimeBase::Virtual(c.vtime));
            let stop = Message::new(Endpoint::DRIVER, 1, Payload::Control(Control::Stop));
            let _ = c.op.as_mut().expect("live operator").on_message(stop, &mut ctx);
            c.done = true;
            c.output = Some(c.op.take().expect("live operator").finish());
        }
        for ch in &mut self.chans {
            if ch.from.is_some() {
                self.ctxs[ch.to].dropped += ch.queue.len() as u64;
            }
            ch.queue.clear();
        }
    }

    fn into_report(self, stopped: bool) -> RunReport {
        let elapsed_ns = self.ctxs.iter().map(|c| c.vtime).max().unwrap_or(0);
        let topology = self.topology;
        let contexts = self
            .ctxs
            .into_iter()
            .map(|c| ContextReport {
                endpoint: c.me,
                operator: topology.name(c.me.operator).to_string(),
                kind: topology.kind(c.me.operator),
                sent_to: c.sent_to,
                received_from: c.received_from,
                dropped: c.dropped,
                seq_gaps: c.seq_gaps,
                output: c.output.unwrap_or(OperatorOutput::None),
            })
            .collect();
        RunReport {
            contexts,
            trace: self.trace.unwrap_or_default(),
            elapsed_ns,
            stopped,
        }
    }
}
