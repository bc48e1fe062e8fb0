//! Length-prefixed TCP transport for running replicas in separate processes.
//!
//! Every frame is one envelope, little-endian:
//!
//! ```text
//! magic 0xA1B2 (u16) | kind (u8) | sender operator (u16) | sender rank (u32)
//! | seq (u64) | payload length (u32) | payload bytes
//! ```
//!
//! Gradient payloads use the layout in [`crate::model::encode_gradient`].

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;

use thiserror::Error;

use super::{Control, Endpoint, Message, MessageKind, OperatorId, Payload, PredictInput, PredictRequest, Prediction, RankId, Record};
use crate::learners::TrainingPair;
use crate::model::{decode_gradient, encode_gradient};
use crate::stream::{Event, MiniBatch};
use crate::wire::{Reader, WireError, Writer};

pub const MAGIC: u16 = 0xA1B2;
pub const HEADER_LEN: usize = 2 + 1 + 2 + 4 + 8 + 4;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("payload of {0} bytes exceeds the u32 length field")]
    TooLarge(usize),
}

/// Serializes `msg` into one envelope frame.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, TransportError> {
    let payload = encode_payload(&msg.payload);
    let len = u32::try_from(payload.len()).map_err(|_| TransportError::TooLarge(payload.len()))?;
    let mut w = Writer::with_capacity(HEADER_LEN + payload.len());
    w.u16(MAGIC)
        .u8(msg.kind() as u8)
        .u16(msg.sender.operator.0)
        .u32(msg.sender.rank.0)
        .u64(msg.seq)
        .u32(len)
        .bytes(&payload);
    Ok(w.into_bytes())
}

/// Parses one complete envelope frame.
pub fn decode_message(frame: &[u8]) -> Result<Message, TransportError> {
    let mut r = Reader::new(frame);
    let magic = r.u16()?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic).into());
    }
    let tag = r.u8()?;
    let kind = MessageKind::from_tag(tag).ok_or(WireError::UnknownTag { what: "message kind", tag })?;
    let sender = Endpoint::new(OperatorId(r.u16()?), RankId(r.u32()?));
    let seq = r.u64()?;
    let len = r.u32()? as usize;
    let body = r.take(len)?;
    r.finish()?;
    let payload = decode_payload(kind, body)?;
    Ok(Message::new(sender, seq, payload))
}

pub fn encode_payload(payload: &Payload) -> Vec<u8> {
    match payload {
        Payload::Gradient(g) => encode_gradient(g),
        Payload::MiniBatch(b) => {
            let mut w = Writer::new();
            w.u64(b.id).u64(b.created_ts).u32(b.shard_key.len() as u32).bytes(&b.shard_key);
            w.u32(b.pairs.len() as u32);
            for p in &b.pairs {
                write_pair(&mut w, p);
            }
            w.into_bytes()
        }
        Payload::Control(c) => {
            let mut w = Writer::new();
            match c {
                Control::EndOfStream => w.u8(0),
                Control::Stop => w.u8(1),
                Control::BarrierReached { round, local_total } => w.u8(2).u64(*round).u64(*local_total),
                Control::PeerDone { local_total } => w.u8(3).u64(*local_total),
            };
            w.into_bytes()
        }
        Payload::PredictRequest(req) => {
            let mut w = Writer::new();
            w.u64(req.request_id);
            match req.reply_to {
                Some(ep) => w.u8(1).u16(ep.operator.0).u32(ep.rank.0),
                None => w.u8(0),
            };
            match &req.input {
                PredictInput::Features(f) => w.u8(0).u32(f.len() as u32).f32s(f),
                PredictInput::Token(t) => w.u8(1).u32(*t),
            };
            w.into_bytes()
        }
        Payload::Prediction(p) => {
            let mut w = Writer::new();
            w.u64(p.request_id).u32(p.served_by.0).u32(p.values.len() as u32).f32s(&p.values);
            w.into_bytes()
        }
        Payload::Event(e) => {
            let mut w = Writer::new();
            w.u64(e.ts);
            match &e.payload {
                Record::Text(s) => w.u8(0).u32(s.len() as u32).bytes(s.as_bytes()),
                Record::Tokens(t) => {
                    w.u8(1).u32(t.len() as u32);
                    for x in t {
                        w.u32(*x);
                    }
                    &mut w
                }
                Record::Pair(p) => {
                    w.u8(2);
                    write_pair(&mut w, p);
                    &mut w
                }
            };
            w.into_bytes()
        }
    }
}

pub fn decode_payload(kind: MessageKind, body: &[u8]) -> Result<Payload, WireError> {
    if kind == MessageKind::Gradient {
        return Ok(Payload::Gradient(Arc::new(decode_gradient(body)?)));
    }
    let mut r = Reader::new(body);
    let payload = match kind {
        MessageKind::Gradient => unreachable!(),
        MessageKind::MiniBatch => {
            let id = r.u64()?;
            let created_ts = r.u64()?;
            let key_len = r.u32()? as usize;
            let shard_key = r.take(key_len)?.to_vec();
            let n = r.u32()? as usize;
            let pairs = (0..n).map(|_| read_pair(&mut r)).collect::<Result<_, _>>()?;
            Payload::MiniBatch(Arc::new(MiniBatch { id, pairs, created_ts, shard_key }))
        }
        MessageKind::Control => Payload::Control(match r.u8()? {
            0 => Control::EndOfStream,
            1 => Control::Stop,
            2 => Control::BarrierReached { round: r.u64()?, local_total: r.u64()? },
            3 => Control::PeerDone { local_total: r.u64()? },
            tag => return Err(WireError::UnknownTag { what: "control", tag }),
        }),
        MessageKind::PredictRequest => {
            let request_id = r.u64()?;
            let reply_to = match r.u8()? {
                0 => None,
                1 => Some(Endpoint::new(OperatorId(r.u16()?), RankId(r.u32()?))),
                tag => return Err(WireError::UnknownTag { what: "reply_to", tag }),
            };
            let input = match r.u8()? {
                0 => {
                    let n = r.u32()? as usize;
                    PredictInput::Features(r.f32s(n)?)
                }
                1 => PredictInput::Token(r.u32()?),
                tag => return Err(WireError::UnknownTag { what: "predict input", tag }),
            };
            Payload::PredictRequest(PredictRequest { request_id, input, reply_to })
        }
        MessageKind::Prediction => {
            let request_id = r.u64()?;
            let served_by = RankId(r.u32()?);
            let n = r.u32()? as usize;
            Payload::Prediction(Prediction { request_id, values: r.f32s(n)?, served_by })
        }
        MessageKind::Event => {
            let ts = r.u64()?;
            let record = match r.u8()? {
                0 => {
                    let n = r.u32()? as usize;
                    Record::Text(String::from_utf8(r.take(n)?.to_vec()).map_err(|_| WireError::Utf8)?)
                }
                1 => {
                    let n = r.u32()? as usize;
                    Record::Tokens((0..n).map(|_| r.u32()).collect::<Result<_, _>>()?)
                }
                2 => Record::Pair(read_pair(&mut r)?),
                tag => return Err(WireError::UnknownTag { what: "record", tag }),
            };
            Payload::Event(Event { payload: record, ts })
        }
    };
    r.finish()?;
    Ok(payload)
}

fn write_pair(w: &mut Writer, p: &TrainingPair) {
    match p {
        TrainingPair::Skipgram { center, context, label } => {
            w.u8(0).u32(*center).u32(*context).u8(*label);
        }
        TrainingPair::Labeled { features, label } => {
            w.u8(1).u32(*label).u32(features.len() as u32).f32s(features);
        }
    }
}

fn read_pair(r: &mut Reader<'_>) -> Result<TrainingPair, WireError> {
    Ok(match r.u8()? {
        0 => TrainingPair::Skipgram {
            center: r.u32()?,
            context: r.u32()?,
            label: r.u8()?,
        },
        1 => {
            let label = r.u32()?;
            let n = r.u32()? as usize;
            TrainingPair::Labeled { features: r.f32s(n)?, label }
        }
        tag => return Err(WireError::UnknownTag { what: "training pair", tag }),
    })
}

/// A bidirectional framed connection.
pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn try_clone(&self) -> Result<Self, TransportError> {
        Ok(Self { stream: self.stream.try_clone()? })
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.stream.write_all(&encode_message(msg)?)?;
        Ok(())
    }

    /// Reads one frame. Returns `Ok(None)` on a clean end of stream.
    pub fn recv(&mut self) -> Result<Option<Message>, TransportError> {
        let mut header = [0u8; HEADER_LEN];
        match self.stream.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(header[HEADER_LEN - 4..].try_into().expect("4 bytes")) as usize;
        let mut frame = header.to_vec();
        frame.resize(HEADER_LEN + len, 0);
        self.stream.read_exact(&mut frame[HEADER_LEN..])?;
        Ok(Some(decode_message(&frame)?))
    }
}
