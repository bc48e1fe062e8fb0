use std::sync::Arc;

use super::Event;
use crate::dataflow::{Context, Control, EngineError, InstanceInfo, Message, Operator, OperatorOutput, Payload, Record};

/// Emits a fixed list of records, one per step, then end-of-stream.
pub struct RecordSource {
    records: Arc<Vec<Record>>,
    next: usize,
    stride: usize,
    emitted: u64,
    done: bool,
}

impl RecordSource {
    /// Instance `r` of `n` emits records `r, r + n, ...`.
    pub fn new(info: &InstanceInfo, records: Arc<Vec<Record>>) -> Self {
        Self {
            records,
            next: info.rank().index(),
            stride: info.instances as usize,
            emitted: 0,
            done: false,
        }
    }
}

impl Operator for RecordSource {
    fn on_message(&mut self, msg: Message, _ctx: &mut Context<'_>) -> Result<(), EngineError> {
        if let Payload::Control(Control::Stop) = msg.payload {
            self.done = true;
        }
        Ok(())
    }

    fn has_work(&self) -> bool {
        !self.done
    }

    fn step(&mut self, ctx: &mut Context<'_>) -> Result<(), EngineError> {
        match self.records.get(self.next) {
            Some(r) => {
                ctx.charge(50);
                let ev = Event::new(r.clone(), ctx.now_ns());
                ctx.emit(Payload::Event(ev));
                self.next += self.stride;
                self.emitted += 1;
            }
            None => {
                ctx.emit_end_of_stream();
                self.done = true;
            }
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn finish(self: Box<Self>) -> OperatorOutput {
        OperatorOutput::Source { batches: 0, events: self.emitted }
    }
}

/// Emits a fixed list of arbitrary payloads, then end-of-stream.
///
/// Every instance emits the whole list; use one instance unless duplicates
/// are wanted. Handy for prediction requests and hand-built test streams.
pub struct PayloadSource {
    items: Arc<Vec<Payload>>,
    next: usize,
    done: bool,
}

impl PayloadSource {
    pub fn new(items: Arc<Vec<Payload>>) -> Self {
        Self { items, next: 0, done: false }
    }
}

impl Operator for PayloadSource {
    fn on_message(&mut self, msg: Message, _ctx: &mut Context<'_>) -> Result<(), EngineError> {
        if let Payload::Control(Control::Stop) = msg.payload {
            self.done = true;
        }
        Ok(())
    }

    fn has_work(&self) -> bool {
        !self.done
    }

    fn step(&mut self, ctx: &mut Context<'_>) -> Result<(), EngineError> {
        match self.items.get(self.next) {
            Some(p) => {
                ctx.charge(50);
                ctx.emit(p.clone());
                self.next += 1;
            }
            None => {
                ctx.emit_end_of_stream();
                self.done = true;
            }
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn finish(self: Box<Self>) -> OperatorOutput {
        OperatorOutput::Source { batches: 0, events: self.next as u64 }
    }
}

type UserFn = Box<dyn FnMut(Event<Record>, &mut Vec<Record>) + Send>;

/// Map, Split or Udf operator driven by a user function over stream records.
///
/// Each output record keeps the input's timestamp. End-of-stream is forwarded
/// once every upstream instance has finished.
pub struct FnOperator {
    f: UserFn,
    upstream: u32,
    eos: u32,
    done: bool,
    out: Vec<Record>,
}

impl FnOperator {
    pub fn new<F>(info: &InstanceInfo, f: F) -> Self
    where
        F: FnMut(Event<Record>, &mut Vec<Record>) + Send + 'static,
    {
        Self { f: Box::new(f), upstream: info.upstream, eos: 0, done: false, out: Vec::new() }
    }
}

impl Operator for FnOperator {
    fn on_message(&mut self, msg: Message, ctx: &mut Context<'_>) -> Result<(), EngineError> {
        match msg.payload {
            Payload::Event(e) => {
                let ts = e.ts;
                (self.f)(e, &mut self.out);
                ctx.charge(30);
                for r in self.out.drain(..) {
                    ctx.emit(Payload::Event(Event::new(r, ts)));
                }
            }
            Payload::Control(Control::EndOfStream) => {
                self.eos += 1;
                if self.eos >= self.upstream {
                    ctx.emit_end_of_stream();
                    self.done = true;
                }
            }
            Payload::Control(Control::Stop) => self.done = true,
            other => return Err(EngineError::Operator(format!("unexpected {:?} message", other.kind()))),
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn finish(self: Box<Self>) -> OperatorOutput {
        OperatorOutput::None
    }
}

/// Keeps every non-control payload it receives.
pub struct CollectSink {
    items: Vec<Payload>,
    upstream: u32,
    eos: u32,
    done: bool,
}

impl CollectSink {
    pub fn new(info: &InstanceInfo) -> Self {
        Self { items: Vec::new(), upstream: info.upstream, eos: 0, done: info.upstream == 0 }
    }
}

impl Operator for CollectSink {
    fn on_message(&mut self, msg: Message, _ctx: &mut Context<'_>) -> Result<(), EngineError> {
        match msg.payload {
            Payload::Control(Control::EndOfStream) => {
                self.eos += 1;
                self.done = self.eos >= self.upstream;
            }
            Payload::Control(Control::Stop) => self.done = true,
            Payload::Control(_) => {}
            p => self.items.push(p),
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn finish(self: Box<Self>) -> OperatorOutput {
        OperatorOutput::Collected(self.items)
    }
}
