//! Model replicas and the operator that exchanges their gradients.
//!
//! Each replica computes gradients on the mini-batches routed to it, applies
//! them immediately, and ships them to every peer, which apply them on
//! arrival. Staleness of every application is tracked with vector clocks.

mod clock;
mod operator;
mod oracle;
mod replica;
mod script;

use thiserror::Error;

use crate::dataflow::MessageKind;
use crate::learners::LearnerError;

pub use crate::learners::{Delta, SparseRow};
pub use clock::{compute_staleness, decode_gradient, encode_gradient, GradientUpdate, StalenessRecord, VectorClock};
pub use operator::{BatchLatency, LossPoint, ModelConfig, ModelOperator, ModelReport};
pub use oracle::{replay_staleness, verify_staleness, OracleMismatch};
pub use replica::{apply_delta, LocalStep, ModelReplica};
pub use script::{three_rank_script, ScriptStep, ScriptedCluster};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite gradient from batch {batch_id}")]
    NonFiniteGradient { batch_id: u64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model operator cannot handle {0:?} messages")]
    UnknownMessageKind(MessageKind),
    #[error("replica is not alive")]
    NotAlive,
    #[error("vector clocks over different rank sets ({left} vs {right})")]
    MismatchedRankSets { left: usize, right: usize },
    #[error("gradient {got} from rank {origin} arrived out of order (expected {expected})")]
    OutOfOrder { origin: u32, expected: u64, got: u64 },
    #[error("no gradient in flight from rank {from} to rank {to}")]
    NothingInFlight { from: u32, to: u32 },
    #[error(transparent)]
    Learner(#[from] LearnerError),
}
