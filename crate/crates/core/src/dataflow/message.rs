use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Endpoint, RankId};
use crate::learners::TrainingPair;
use crate::model::GradientUpdate;
use crate::stream::{Event, MiniBatch};

/// Tag byte of a message, as written in the wire envelope.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    MiniBatch = 0,
    Gradient = 1,
    PredictRequest = 2,
    Prediction = 3,
    Control = 4,
    /// Raw stream records flowing between non-model operators.
    Event = 5,
}

impl MessageKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Self::MiniBatch,
            1 => Self::Gradient,
            2 => Self::PredictRequest,
            3 => Self::Prediction,
            4 => Self::Control,
            5 => Self::Event,
            _ => return None,
        })
    }
}

/// Control-plane messages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Control {
    /// Upstream instance has emitted its last message on this channel.
    EndOfStream,
    /// Abort: the receiver stops accepting work and shuts down.
    Stop,
    /// A model rank finished its `round`-th SSP round after `local_total` local gradients.
    BarrierReached { round: u64, local_total: u64 },
    /// A model rank has broadcast all of its `local_total` gradients and will send no more.
    PeerDone { local_total: u64 },
}

/// Input of a prediction request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PredictInput {
    Features(Vec<f32>),
    Token(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub request_id: u64,
    pub input: PredictInput,
    /// Where the prediction should be sent. `None` means along the operator's out-edges.
    pub reply_to: Option<Endpoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub request_id: u64,
    pub values: Vec<f32>,
    pub served_by: RankId,
}

/// Records carried by [`Payload::Event`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Record {
    Text(String),
    Tokens(Vec<u32>),
    Pair(TrainingPair),
}

impl Record {
    pub fn shard_key(&self) -> Vec<u8> {
        match self {
            Record::Text(s) => s.as_bytes().to_vec(),
            Record::Tokens(t) => t.first().map(|t| t.to_le_bytes().to_vec()).unwrap_or_default(),
            Record::Pair(p) => p.shard_key(),
        }
    }
}

/// Message body. Large bodies are reference-counted so that broadcasting a
/// gradient to `n - 1` peers never copies it.
#[derive(Clone, Debug)]
pub enum Payload {
    MiniBatch(Arc<MiniBatch>),
    Gradient(Arc<GradientUpdate>),
    PredictRequest(PredictRequest),
    Prediction(Prediction),
    Control(Control),
    Event(Event<Record>),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::MiniBatch(_) => MessageKind::MiniBatch,
            Payload::Gradient(_) => MessageKind::Gradient,
            Payload::PredictRequest(_) => MessageKind::PredictRequest,
            Payload::Prediction(_) => MessageKind::Prediction,
            Payload::Control(_) => MessageKind::Control,
            Payload::Event(_) => MessageKind::Event,
        }
    }

    /// Default key used by hash-sharded edges.
    pub fn shard_key(&self) -> Vec<u8> {
        match self {
            Payload::MiniBatch(b) => b.shard_key.clone(),
            Payload::Gradient(g) => g.origin.0.to_le_bytes().to_vec(),
            Payload::PredictRequest(r) => r.request_id.to_le_bytes().to_vec(),
            Payload::Prediction(p) => p.request_id.to_le_bytes().to_vec(),
            Payload::Control(_) => Vec::new(),
            Payload::Event(e) => e.payload.shard_key(),
        }
    }
}

/// The single envelope routed between operator instances.
///
/// `seq` numbers each directed (sender, receiver) channel from 1 upwards; it
/// is assigned by the sending context when the message leaves its outbox.
#[derive(Clone, Debug)]
pub struct Message {
    pub sender: Endpoint,
    pub seq: u64,
    pub payload: Payload,
}

impl Message {
    pub fn new(sender: Endpoint, seq: u64, payload: Payload) -> Self {
        Self { sender, seq, payload }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}
