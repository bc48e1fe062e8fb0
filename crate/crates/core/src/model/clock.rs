use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataflow::RankId;
use crate::learners::{Delta, SparseRow};
use crate::wire::{Reader, WireError, Writer};

/// Per-origin count of gradients applied by one replica.
///
/// Channels are FIFO and every origin emits its gradients in order, so the
/// gradients a replica has applied from origin `r` are always exactly
/// `1..=clock[r]`. The clock therefore identifies the applied set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorClock(Vec<u64>);

impl VectorClock {
    pub fn new(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, r: RankId) -> u64 {
        self.0[r.index()]
    }

    pub fn increment(&mut self, r: RankId) {
        self.0[r.index()] += 1;
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl From<Vec<u64>> for VectorClock {
    fn from(v: Vec<u64>) -> Self {
        Self(v)
    }
}

impl fmt::Display for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Size of the symmetric difference between the applied sets described by two clocks.
pub fn compute_staleness(applier: &VectorClock, origin: &VectorClock) -> Result<u64, ModelError> {
    if applier.len() != origin.len() {
        return Err(ModelError::MismatchedRankSets { left: applier.len(), right: origin.len() });
    }
    Ok(applier.0.iter().zip(&origin.0).map(|(a, b)| a.abs_diff(*b)).sum())
}

/// A gradient together with the state of its origin when it was computed.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientUpdate {
    pub origin: RankId,
    /// 1-based index among the origin's own gradients.
    pub origin_seq: u64,
    /// Origin's applied clock just before it applied this gradient to itself.
    pub origin_clock: VectorClock,
    pub delta: Delta,
    /// Mini-batch the gradient was computed from. Not carried on the wire.
    pub batch_id: u64,
}

/// One gradient application as seen by the applying replica.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalenessRecord {
    pub applier: u32,
    pub origin: u32,
    pub origin_seq: u64,
    pub staleness: u64,
    /// Time of application in run nanoseconds (virtual under the deterministic executor).
    pub wall_ts: u64,
}

/// Serializes a gradient in the payload layout of gradient messages.
pub fn encode_gradient(g: &GradientUpdate) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(g.origin.0).u64(g.origin_seq).u32(g.origin_clock.len() as u32);
    for &c in g.origin_clock.as_slice() {
        w.u64(c);
    }
    match &g.delta {
        Delta::Dense(v) => {
            w.u8(0).u64(v.len() as u64).f32s(v);
        }
        Delta::Sparse(rows) => {
            w.u8(1).u64(rows.len() as u64);
            for r in rows {
                w.u32(r.index).u32(r.values.len() as u32).f32s(&r.values);
            }
        }
    }
    w.into_bytes()
}

pub fn decode_gradient(bytes: &[u8]) -> Result<GradientUpdate, WireError> {
    let mut r = Reader::new(bytes);
    let origin = RankId(r.u32()?);
    let origin_seq = r.u64()?;
    let n = r.u32()? as usize;
    let mut clock = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        clock.push(r.u64()?);
    }
    let delta = match r.u8()? {
        0 => {
            let len = r.u64()? as usize;
            Delta::Dense(r.f32s(len)?)
        }
        1 => {
            let rows = r.u64()? as usize;
            let mut out = Vec::with_capacity(rows.min(1 << 16));
            for _ in 0..rows {
                let index = r.u32()?;
                let width = r.u32()? as usize;
                out.push(SparseRow { index, values: r.f32s(width)? });
            }
            Delta::Sparse(out)
        }
        tag => return Err(WireError::UnknownTag { what: "gradient format", tag }),
    };
    r.finish()?;
    Ok(GradientUpdate { origin, origin_seq, origin_clock: VectorClock(clock), delta, batch_id: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clock(v: &[u64]) -> VectorClock {
        VectorClock::from(v.to_vec())
    }

    #[test]
    fn worked_example_staleness() {
        // Rank 0 applied its own two gradients; ranks 1 and 2 computed theirs on empty clocks.
        assert_eq!(compute_staleness(&clock(&[2, 0, 0]), &clock(&[0, 0, 0])).unwrap(), 2);
        assert_eq!(compute_staleness(&clock(&[2, 1, 0]), &clock(&[0, 0, 0])).unwrap(), 3);
        assert_eq!(compute_staleness(&clock(&[4, 2, 1]), &clock(&[4, 2, 1])).unwrap(), 0);
    }

    #[test]
    fn mismatched_rank_sets() {
        assert!(matches!(
            compute_staleness(&clock(&[1, 2]), &clock(&[1, 2, 3])),
            Err(ModelError::MismatchedRankSets { left: 2, right: 3 })
        ));
    }

    #[test]
    fn gradient_layout_is_little_endian() {
        let g = GradientUpdate {
            origin: RankId(2),
            origin_seq: 5,
            origin_clock: clock(&[1, 0, 4]),
            delta: Delta::Sparse(vec![SparseRow { index: 7, values: vec![1.0, -2.0] }]),
            batch_id: 99,
        };
        let b = encode_gradient(&g);
        assert_eq!(&b[0..4], &[2, 0, 0, 0]);
        assert_eq!(&b[4..12], &5u64.to_le_bytes());
        assert_eq!(&b[12..16], &3u32.to_le_bytes());
        assert_eq!(b[40], 1);
        assert_eq!(&b[41..49], &1u64.to_le_bytes());
        assert_eq!(&b[49..53], &7u32.to_le_bytes());
        assert_eq!(&b[53..57], &2u32.to_le_bytes());
        assert_eq!(&b[57..61], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 65);
        let back = decode_gradient(&b).unwrap();
        assert_eq!(back, GradientUpdate { batch_id: 0, ..g });
    }

    #[test]
    fn rejects_bad_format_tag_and_trailing_bytes() {
        let g = GradientUpdate {
            origin: RankId(0),
            origin_seq: 1,
            origin_clock: clock(&[0]),
            delta: Delta::Dense(vec![0.5]),
            batch_id: 0,
        };
        let mut b = encode_gradient(&g);
        b.push(0);
        assert!(decode_gradient(&b).is_err());
        b.pop();
        b[24] = 9;
        assert!(matches!(decode_gradient(&b), Err(WireError::UnknownTag { tag: 9, .. })));
    }
}
