//! Operator graphs, message envelopes and the executors that run them.
//!
//! A [`DataflowGraph`] is a set of logical operators, each replicated into
//! `instance_count` ranks, wired together by routed edges. Every rank runs as
//! an isolated execution context that owns its state and talks to the rest of
//! the graph only through per-channel FIFO message queues. Edges between
//! `Model` operators are allowed to form cycles; they carry the peer-to-peer
//! gradient exchange.

mod channel;
mod graph;
mod message;
mod operator;
mod runtime;
mod shard;
mod sim;
pub mod transport;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use channel::{mailbox, Address, ChannelClosed, Inlet, Outlet};
pub use graph::{
    build_graph, DataflowGraph, EdgeSpec, GraphError, InstanceInfo, KeyExtractor, OperatorFactory, OperatorKind,
    OperatorSpec, Routing, Topology,
};
pub use message::{Control, Message, MessageKind, Payload, PredictInput, PredictRequest, Prediction, Record};
pub use operator::{Context, Operator, OperatorOutput};
pub use runtime::{
    run_graph, ChannelStats, ContextReport, Delivery, EngineError, Executor, Mode, RunHandle, RunOptions,
    RunReport,
};
pub use shard::{fnv1a64, hash_shard};

/// Index of one instance within a logical operator. Dense in `0..n`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RankId(pub u32);

impl RankId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RankId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Position of a logical operator in its graph's declaration order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OperatorId(pub u16);

/// One concrete operator instance: the address messages are sent to.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub operator: OperatorId,
    pub rank: RankId,
}

impl Endpoint {
    /// Pseudo-endpoint used by run handles when injecting control messages.
    pub const DRIVER: Endpoint = Endpoint {
        operator: OperatorId(u16::MAX),
        rank: RankId(0),
    };

    pub fn new(operator: OperatorId, rank: RankId) -> Self {
        Self { operator, rank }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Endpoint::DRIVER {
            write!(f, "driver")
        } else {
            write!(f, "op{}#{}", self.operator.0, self.rank.0)
        }
    }
}
