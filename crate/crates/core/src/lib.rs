//! Decentralized asynchronous online learning on a dataflow engine.
//!
//! Model replicas run as operator instances, train on the mini-batches routed
//! to them, and exchange gradients directly with each other.

pub mod dataflow;
pub mod datasets;
pub mod drift;
pub mod harness;
pub mod learners;
pub mod model;
pub mod session;
pub mod stream;
pub mod wire;

pub use dataflow::{
    build_graph, run_graph, DataflowGraph, EdgeSpec, Endpoint, EngineError, Executor, Mode, OperatorKind,
    OperatorSpec, RankId, Routing, RunOptions, RunReport,
};
pub use learners::{Learner, LearnerSpec, ParamStore, TrainingPair};
pub use model::{GradientUpdate, ModelConfig, ModelReport, StalenessRecord, VectorClock};
pub use stream::{Event, MiniBatch};
