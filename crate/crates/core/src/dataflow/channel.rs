use std::collections::HashMap;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TryRecvError};
use thiserror::Error;

use super::{Endpoint, Message, Payload};

/// The receiving side of a channel has shut down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("channel to {dest} is closed")]
pub struct ChannelClosed {
    pub dest: Endpoint,
}

/// Creates an inbox for `owner`. `capacity = None` makes it unbounded;
/// otherwise a full inbox blocks senders.
pub fn mailbox(owner: Endpoint, capacity: Option<usize>) -> (Address, Inlet) {
    let (tx, rx) = match capacity {
        Some(c) => crossbeam_channel::bounded(c),
        None => crossbeam_channel::unbounded(),
    };
    (
        Address { owner, tx },
        Inlet {
            owner,
            rx,
            expected: HashMap::new(),
            seq_gaps: 0,
        },
    )
}

/// Cloneable handle to an inbox from which per-sender [`Outlet`]s are made.
#[derive(Clone, Debug)]
pub struct Address {
    owner: Endpoint,
    tx: Sender<Message>,
}

impl Address {
    pub fn owner(&self) -> Endpoint {
        self.owner
    }

    /// A directed channel `from -> owner` with its own sequence counter.
    pub fn outlet(&self, from: Endpoint) -> Outlet {
        Outlet {
            from,
            dest: self.owner,
            tx: self.tx.clone(),
            next_seq: 1,
        }
    }
}

/// One directed channel. Stamps consecutive sequence numbers on everything it sends.
#[derive(Debug)]
pub struct Outlet {
    from: Endpoint,
    dest: Endpoint,
    tx: Sender<Message>,
    next_seq: u64,
}

impl Outlet {
    pub fn dest(&self) -> Endpoint {
        self.dest
    }

    /// Number of messages successfully sent so far.
    pub fn sent(&self) -> u64 {
        self.next_seq - 1
    }

    /// Enqueues `payload`, blocking while a bounded inbox is full.
    pub fn send(&mut self, payload: Payload) -> Result<u64, ChannelClosed> {
        let seq = self.next_seq;
        self.tx
            .send(Message::new(self.from, seq, payload))
            .map_err(|_| ChannelClosed { dest: self.dest })?;
        self.next_seq += 1;
        Ok(seq)
    }
}

/// Receiving side of an inbox. Verifies per-sender sequence continuity.
#[derive(Debug)]
pub struct Inlet {
    owner: Endpoint,
    rx: Receiver<Message>,
    expected: HashMap<Endpoint, u64>,
    seq_gaps: u64,
}

impl Inlet {
    pub fn owner(&self) -> Endpoint {
        self.owner
    }

    /// Count of messages whose sequence number was not the successor of the
    /// previous one from the same sender.
    pub fn seq_gaps(&self) -> u64 {
        self.seq_gaps
    }

    pub fn receiver(&self) -> &Receiver<Message> {
        &self.rx
    }

    /// Books a message obtained directly from [`Inlet::receiver`].
    pub fn accept(&mut self, msg: Message) -> Message {
        let expected = self.expected.entry(msg.sender).or_insert(1);
        if msg.seq != *expected {
            self.seq_gaps += 1;
        }
        *expected = msg.seq + 1;
        msg
    }

    pub fn try_recv(&mut self) -> Option<Message> {
        match self.rx.try_recv() {
            Ok(m) => Some(self.accept(m)),
            Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => None,
        }
    }

    pub fn recv_timeout(&mut self, timeout: Duration) -> Option<Message> {
        match self.rx.recv_timeout(timeout) {
            Ok(m) => Some(self.accept(m)),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        }
    }

    /// Number of messages currently queued.
    pub fn len(&self) -> usize {
        self.rx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rx.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{Control, OperatorId, RankId};

    fn ep(op: u16, rank: u32) -> Endpoint {
        Endpoint::new(OperatorId(op), RankId(rank))
    }

    #[test]
    fn fifo_per_channel() {
        let (addr, mut inlet) = mailbox(ep(1, 0), Some(8));
        let mut out = addr.outlet(ep(0, 0));
        out.send(Payload::Control(Control::EndOfStream)).unwrap();
        out.send(Payload::Control(Control::Stop)).unwrap();
        let a = inlet.try_recv().unwrap();
        let b = inlet.try_recv().unwrap();
        assert_eq!((a.seq, b.seq), (1, 2));
        assert!(matches!(b.payload, Payload::Control(Control::Stop)));
        assert_eq!(inlet.seq_gaps(), 0);
    }

    #[test]
    fn send_after_shutdown_is_channel_closed() {
        let (addr, inlet) = mailbox(ep(1, 0), Some(8));
        let mut out = addr.outlet(ep(0, 0));
        drop(inlet);
        let err = out.send(Payload::Control(Control::Stop)).unwrap_err();
        assert_eq!(err.dest, ep(1, 0));
        assert_eq!(out.sent(), 0);
    }

    #[test]
    fn independent_senders_keep_own_sequences() {
        let (addr, mut inlet) = mailbox(ep(2, 0), None);
        let mut a = addr.outlet(ep(0, 0));
        let mut b = addr.outlet(ep(1, 0));
        a.send(Payload::Control(Control::EndOfStream)).unwrap();
        b.send(Payload::Control(Control::EndOfStream)).unwrap();
        a.send(Payload::Control(Control::EndOfStream)).unwrap();
        let seqs: Vec<_> = std::iter::from_fn(|| inlet.try_recv())
            .map(|m| (m.sender, m.seq))
            .collect();
        assert_eq!(seqs, vec![(ep(0, 0), 1), (ep(1, 0), 1), (ep(0, 0), 2)]);
        assert_eq!(inlet.seq_gaps(), 0);
    }
}
