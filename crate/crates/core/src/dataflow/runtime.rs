use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::Select;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::channel::{mailbox, Address, Inlet, Outlet};
use super::graph::{DataflowGraph, InstanceInfo, OperatorKind, Topology};
use super::operator::{Context, Operator, OperatorOutput, TimeBase};
use super::{sim, ChannelClosed, Control, Endpoint, GraphError, Message, Payload};
use crate::learners::LearnerError;
use crate::model::{ModelError, ModelReport};

/// How model replicas synchronize.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fully asynchronous gradient exchange.
    Asgd,
    /// Stale-synchronous rounds of `k` local gradients per replica.
    Ssp(u64),
    /// Synchronous baseline; only valid with a single model rank.
    Sync,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Executor {
    /// One OS thread per operator instance.
    Threads,
    /// Single-threaded discrete-event scheduler over virtual time. Ties between
    /// contexts that are ready at the same instant are broken by a seeded RNG,
    /// so a given seed always reproduces the same interleaving.
    Deterministic {
        seed: u64,
        /// Virtual delay between a send and the message becoming visible.
        link_latency_ns: u64,
        /// Relative jitter applied to charged work, drawn per step.
        jitter: f64,
        record_trace: bool,
    },
}

impl Executor {
    pub fn deterministic(seed: u64) -> Self {
        Executor::Deterministic {
            seed,
            link_latency_ns: 1_000,
            jitter: 0.2,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub mode: Mode,
    pub executor: Executor,
    /// Capacity of data (non-peer) inboxes. A full inbox blocks its producer.
    pub queue_capacity: usize,
    pub barrier_timeout: Duration,
    /// Stop every context this long after the run starts.
    pub stop_after: Option<Duration>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Asgd,
            executor: Executor::Threads,
            queue_capacity: 1024,
            barrier_timeout: Duration::from_secs(30),
            stop_after: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    ChannelClosed(#[from] ChannelClosed),
    #[error("failed to spawn execution context: {0}")]
    SpawnFailure(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("{endpoint} waited {waited:?} at a synchronization barrier")]
    BarrierTimeout { endpoint: Endpoint, waited: Duration },
    #[error("no context can make progress; waiting: {0:?}")]
    Deadlock(Vec<Endpoint>),
    #[error("invalid mode: {0}")]
    InvalidMode(String),
    #[error("operator error: {0}")]
    Operator(String),
    #[error("execution context {0} panicked")]
    Panicked(Endpoint),
}

/// Message accounting for one directed channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelStats {
    pub from: Endpoint,
    pub to: Endpoint,
    pub sent: u64,
    pub received: u64,
}

/// Everything one execution context reports when it exits.
#[derive(Debug)]
pub struct ContextReport {
    pub endpoint: Endpoint,
    pub operator: String,
    pub kind: OperatorKind,
    pub sent_to: BTreeMap<Endpoint, u64>,
    pub received_from: BTreeMap<Endpoint, u64>,
    /// Messages discarded because the context was stopped.
    pub dropped: u64,
    pub seq_gaps: u64,
    pub output: OperatorOutput,
}

impl ContextReport {
    pub fn sent(&self) -> u64 {
        self.sent_to.values().sum()
    }

    pub fn received(&self) -> u64 {
        self.received_from.values().sum()
    }
}

/// One delivery as seen by the deterministic executor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub at_ns: u64,
    pub to: Endpoint,
    pub from: Endpoint,
    pub seq: u64,
}

#[derive(Debug)]
pub struct RunReport {
    pub contexts: Vec<ContextReport>,
    /// Deliveries in execution order (deterministic executor with tracing only).
    pub trace: Vec<Delivery>,
    /// Wall-clock (or virtual) duration of the run.
    pub elapsed_ns: u64,
    pub stopped: bool,
}

impl RunReport {
    pub fn total_sent(&self) -> u64 {
        self.contexts.iter().map(|c| c.sent()).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.contexts.iter().map(|c| c.received()).sum()
    }

    pub fn total_dropped(&self) -> u64 {
        self.contexts.iter().map(|c| c.dropped).sum()
    }

    pub fn total_seq_gaps(&self) -> u64 {
        self.contexts.iter().map(|c| c.seq_gaps).sum()
    }

    pub fn channel_stats(&self) -> Vec<ChannelStats> {
        let mut map: BTreeMap<(Endpoint, Endpoint), ChannelStats> = BTreeMap::new();
        for c in &self.contexts {
            for (&to, &n) in &c.sent_to {
                map.entry((c.endpoint, to))
                    .or_insert(ChannelStats { from: c.endpoint, to, sent: 0, received: 0 })
                    .sent += n;
            }
            for (&from, &n) in &c.received_from {
                map.entry((from, c.endpoint))
                    .or_insert(ChannelStats { from, to: c.endpoint, sent: 0, received: 0 })
                    .received += n;
            }
        }
        map.into_values().collect()
    }

    /// Model replica reports ordered by (operator, rank).
    pub fn model_reports(&self) -> Vec<&ModelReport> {
        self.contexts
            .iter()
            .filter_map(|c| match &c.output {
                OperatorOutput::Model(r) => Some(r.as_ref()),
                _ => None,
            })
            .collect()
    }

    pub fn into_model_reports(self) -> Vec<ModelReport> {
        self.contexts
            .into_iter()
            .filter_map(|c| match c.output {
                OperatorOutput::Model(r) => Some(*r),
                _ => None,
            })
            .collect()
    }

    /// Payloads gathered by collecting sinks.
    pub fn collected(&self) -> Vec<&Payload> {
        self.contexts
            .iter()
            .filter_map(|c| match &c.output {
                OperatorOutput::Collected(v) => Some(v.iter()),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

enum Running {
    Threads {
        origin: Instant,
        workers: Vec<(Endpoint, JoinHandle<(ContextReport, Option<EngineError>)>)>,
        driver: Vec<Outlet>,
    },
    Deterministic {
        graph: DataflowGraph,
        topology: Arc<Topology>,
        opts: RunOptions,
    },
}

/// Handle to a started run.
pub struct RunHandle {
    running: Running,
    stop_after: Option<Duration>,
    stopped: bool,
}

impl RunHandle {
    /// Sends `Stop` to every context. Contexts discard whatever is still queued.
    pub fn stop(&mut self) {
        self.stopped = true;
        match &mut self.running {
            Running::Threads { driver, .. } => {
                for out in driver.iter_mut() {
                    let _ = out.send(Payload::Control(Control::Stop));
                }
            }
            Running::Deterministic { opts, .. } => {
                opts.stop_after = Some(opts.stop_after.unwrap_or(Duration::ZERO));
            }
        }
    }

    /// Waits for every context to exit and collects their reports.
    pub fn join(mut self) -> Result<RunReport, EngineError> {
        match self.running {
            Running::Threads { .. } => self.join_threads(),
            Running::Deterministic { graph, topology, opts } => {
                sim::run(&graph, topology, &opts)
            }
        }
    }

    fn join_threads(&mut self) -> Result<RunReport, EngineError> {
        let Running::Threads { origin, workers, driver } = &mut self.running else {
            unreachable!()
        };
        let origin = *origin;
        if let Some(deadline) = self.stop_after {
            while origin.elapsed() < deadline && !workers.iter().all(|(_, w)| w.is_finished()) {
                std::thread::sleep(Duration::from_millis(2));
            }
            if !workers.iter().all(|(_, w)| w.is_finished()) {
                self.stopped = true;
                for out in driver.iter_mut() {
                    let _ = out.send(Payload::Control(Control::Stop));
                }
            }
        }
        let mut contexts = Vec::new();
        let mut first_error = None;
        for (endpoint, worker) in workers.drain(..) {
            match worker.join() {
                Ok((report, err)) => {
                    contexts.push(report);
                    if let Some(e) = err {
                        let benign = self.stopped && matches!(e, EngineError::ChannelClosed(_));
                        if !benign && first_error.is_none() {
                            first_error = Some(e);
                        }
                    }
                }
                Err(_) => {
                    if first_error.is_none() {
                        first_error = Some(EngineError::Panicked(endpoint));
                    }
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        Ok(RunReport {
            contexts,
            trace: Vec::new(),
            elapsed_ns: origin.elapsed().as_nanos() as u64,
            stopped: self.stopped,
        })
    }
}

pub(crate) fn check_mode(graph: &DataflowGraph, mode: Mode) -> Result<(), EngineError> {
    match mode {
        Mode::Sync => {
            if let Some(op) = graph
                .operators()
                .iter()
                .find(|o| o.kind == OperatorKind::Model && o.instance_count != 1)
            {
                return Err(EngineError::InvalidMode(format!(
                    "sync mode runs a single model rank, `{}` has {}",
                    op.name, op.instance_count
                )));
            }
        }
        Mode::Ssp(0) => return Err(EngineError::InvalidMode("ssp round size must be >= 1".into())),
        _ => {}
    }
    Ok(())
}

/// Starts every operator instance of `graph`.
pub fn run_graph(graph: &DataflowGraph, opts: RunOptions) -> Result<RunHandle, EngineError> {
    check_mode(graph, opts.mode)?;
    let topology = Arc::new(graph.topology());
    let stop_after = opts.stop_after;
    let running = match opts.executor {
        Executor::Deterministic { .. } => Running::Deterministic {
            graph: graph.clone(),
            topology,
            opts,
        },
        Executor::Threads => spawn_threads(graph, topology, &opts)?,
    };
    Ok(RunHandle {
        running,
        stop_after,
        stopped: false,
    })
}

struct Inboxes {
    data: Address,
    peer: Address,
}

fn spawn_threads(graph: &DataflowGraph, topology: Arc<Topology>, opts: &RunOptions) -> Result<Running, EngineError> {
    let mut addresses = HashMap::new();
    let mut inlets = Vec::new();
    for ep in topology.endpoints() {
        let (data, data_in) = mailbox(ep, Some(opts.queue_capacity.max(1)));
        let (peer, peer_in) = mailbox(ep, None);
        addresses.insert(ep, Inboxes { data, peer });
        inlets.push((ep, data_in, peer_in));
    }
    let addresses = Arc::new(addresses);
    let driver = addresses.values().map(|a| a.peer.outlet(Endpoint::DRIVER)).collect();

    let origin = Instant::now();
    let mut workers = Vec::new();
    for (ep, data_in, peer_in) in inlets {
        let spec = &graph.operators()[ep.operator.0 as usize];
        let info = InstanceInfo {
            endpoint: ep,
            instances: spec.instance_count,
            mode: opts.mode,
            upstream: topology.upstream_instances(ep.operator),
        };
        let op = spec.instantiate(&info);
        let worker = ThreadContext {
            me: ep,
            op,
            topology: Arc::clone(&topology),
            addresses: Arc::clone(&addresses),
            outlets: HashMap::new(),
            data_in,
            peer_in,
            origin,
            barrier_timeout: opts.barrier_timeout,
            received_from: BTreeMap::new(),
            dropped: 0,
        };
        let handle = std::thread::Builder::new()
            .name(format!("{}#{}", spec.name, ep.rank.0))
            .spawn(move || worker.run())
            .map_err(|e| EngineError::SpawnFailure(e.to_string()))?;
        workers.push((ep, handle));
    }
    Ok(Running::Threads { origin, workers, driver })
}

struct ThreadContext {
    me: Endpoint,
    op: Box<dyn Operator>,
    topology: Arc<Topology>,
    addresses: Arc<HashMap<Endpoint, Inboxes>>,
    outlets: HashMap<Endpoint, Outlet>,
    data_in: Inlet,
    peer_in: Inlet,
    origin: Instant,
    barrier_timeout: Duration,
    received_from: BTreeMap<Endpoint, u64>,
    dropped: u64,
}

enum Flow {
    Continue,
    Stopped,
}

impl ThreadContext {
    fn run(mut self) -> (ContextReport, Option<EngineError>) {
        let err = self.event_loop().err();
        // Anything still queued is lost with this context.
        while let Some(m) = self.peer_in.try_recv().or_else(|| self.data_in.try_recv()) {
            self.dropped += u64::from(m.sender != Endpoint::DRIVER);
        }
        // A closed channel means a peer already shut down, so the operator is
        // told to stop even if the driver's Stop never reached it.
        if matches!(err, Some(EngineError::ChannelClosed(_))) {
            let topology = Arc::clone(&self.topology);
            let mut ctx = Context::new(self.me, &topology, TimeBase::Wall(self.origin));
            let stop = Message::new(Endpoint::DRIVER, 0, Payload::Control(Control::Stop));
            let _ = self.op.on_message(stop, &mut ctx);
        }
        let ThreadContext { me, op, topology, outlets, data_in, peer_in, received_from, dropped, .. } = self;
        let sent_to = outlets
            .iter()
            .filter(|(_, o)| o.sent() > 0)
            .map(|(&d, o)| (d, o.sent()))
            .collect();
        let report = ContextReport {
            endpoint: me,
            operator: topology.name(me.operator).to_string(),
            kind: topology.kind(me.operator),
            sent_to,
            received_from,
            dropped,
            seq_gaps: data_in.seq_gaps() + peer_in.seq_gaps(),
            output: op.finish(),
        };
        (report, err)
    }

    fn event_loop(&mut self) -> Result<(), EngineError> {
        let mut barrier_wait: Option<Instant> = None;
        loop {
            while let Some(m) = self.peer_in.try_recv() {
                if let Flow::Stopped = self.deliver(m)? {
                    return Ok(());
                }
            }
            if self.op.wants_data() {
                if let Some(m) = self.data_in.try_recv() {
                    if let Flow::Stopped = self.deliver(m)? {
                        return Ok(());
                    }
                    continue;
                }
            }
            if self.op.has_work() {
                let topology = Arc::clone(&self.topology);
                let mut ctx = Context::new(self.me, &topology, TimeBase::Wall(self.origin));
                self.op.step(&mut ctx)?;
                self.flush(&mut ctx)?;
                continue;
            }
            if self.op.is_done() {
                return Ok(());
            }

            if self.op.blocked_on_barrier() {
                let since = *barrier_wait.get_or_insert_with(Instant::now);
                if since.elapsed() > self.barrier_timeout {
                    return Err(EngineError::BarrierTimeout {
                        endpoint: self.me,
                        waited: since.elapsed(),
                    });
                }
            } else {
                barrier_wait = None;
            }

            let wants_data = self.op.wants_data();
            let mut sel = Select::new();
            let peer_idx = sel.recv(self.peer_in.receiver());
            if wants_data {
                sel.recv(self.data_in.receiver());
            }
            let Ok(ready) = sel.select_timeout(Duration::from_millis(50)) else {
                continue;
            };
            let msg = if ready.index() == peer_idx {
                ready.recv(self.peer_in.receiver()).map(|m| self.peer_in.accept(m))
            } else {
                ready.recv(self.data_in.receiver()).map(|m| self.data_in.accept(m))
            };
            if let Ok(m) = msg {
                if let Flow::Stopped = self.deliver(m)? {
                    return Ok(());
                }
            }
        }
    }

    fn deliver(&mut self, msg: Message) -> Result<Flow, EngineError> {
        if msg.sender != Endpoint::DRIVER {
            *self.received_from.entry(msg.sender).or_default() += 1;
        }
        let stop = matches!(msg.payload, Payload::Control(Control::Stop));
        let topology = Arc::clone(&self.topology);
        let mut ctx = Context::new(self.me, &topology, TimeBase::Wall(self.origin));
        let res = self.op.on_message(msg, &mut ctx);
        if stop {
            return Ok(Flow::Stopped);
        }
        res?;
        self.flush(&mut ctx)?;
        Ok(Flow::Continue)
    }

    fn flush(&mut self, ctx: &mut Context<'_>) -> Result<(), EngineError> {
        for (dest, payload) in ctx.take_outbox() {
            if !self.outlets.contains_key(&dest) {
                let inbox = self
                    .addresses
                    .get(&dest)
                    .ok_or(EngineError::ChannelClosed(ChannelClosed { dest }))?;
                let addr = if self.topology.is_peer_channel(self.me, dest) {
                    &inbox.peer
                } else {
                    &inbox.data
                };
                self.outlets.insert(dest, addr.outlet(self.me));
            }
            let outlet = self.outlets.get_mut(&dest).expect("outlet just inserted");
            outlet.send(payload)?;
        }
        Ok(())
    }
}
