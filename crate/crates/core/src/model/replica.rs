use std::collections::HashSet;
use std::sync::Arc;

use super::{compute_staleness, GradientUpdate, ModelError, StalenessRecord, VectorClock};
use crate::dataflow::{PredictInput, RankId};
use crate::learners::{row_range, Delta, Learner, ParamStore, TrainingPair};

/// Parameters of one model replica plus its gradient bookkeeping.
///
/// This is the transport-free core of the model operator: it computes,
/// applies and buffers gradients, and leaves delivery to the caller.
#[derive(Debug)]
pub struct ModelReplica {
    rank: RankId,
    learner: Arc<dyn Learner>,
    alpha: f32,
    theta: ParamStore<f32>,
    applied: VectorClock,
    local_seq: u64,
    buffer: Vec<Arc<GradientUpdate>>,
    max_grad_buffer: usize,
    alive: bool,
    seen: HashSet<(u32, u64)>,
}

/// Result of training on one local mini-batch.
#[derive(Debug)]
pub struct LocalStep {
    pub loss: f64,
    pub update: Arc<GradientUpdate>,
    pub record: StalenessRecord,
    /// Gradients to broadcast now because the buffer reached its limit.
    pub flushed: Vec<Arc<GradientUpdate>>,
}

impl ModelReplica {
    pub fn new(rank: RankId, n_ranks: u32, learner: Arc<dyn Learner>, alpha: f64, max_grad_buffer: usize) -> Self {
        assert!(rank.0 < n_ranks, "rank {rank} outside 0..{n_ranks}");
        assert!(max_grad_buffer >= 1, "max_grad_buffer must be at least 1");
        let theta = learner.init_params();
        Self {
            rank,
            learner,
            alpha: alpha as f32,
            theta,
            applied: VectorClock::new(n_ranks as usize),
            local_seq: 0,
            buffer: Vec::new(),
            max_grad_buffer,
            alive: true,
            seen: HashSet::new(),
        }
    }

    pub fn rank(&self) -> RankId {
        self.rank
    }

    pub fn learner(&self) -> &Arc<dyn Learner> {
        &self.learner
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn theta(&self) -> &ParamStore<f32> {
        &self.theta
    }

    /// Replaces the parameters, e.g. with a pre-trained snapshot.
    ///
    /// # Panics
    /// If the layout differs from the learner's.
    pub fn set_params(&mut self, p: ParamStore<f32>) {
        assert_eq!(p.segments(), self.theta.segments(), "parameter layout mismatch");
        self.theta = p;
    }

    pub fn into_theta(self) -> ParamStore<f32> {
        self.theta
    }

    pub fn clock(&self) -> &VectorClock {
        &self.applied
    }

    pub fn local_seq(&self) -> u64 {
        self.local_seq
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Clears the alive flag; later training calls fail with `NotAlive`.
    pub fn stop(&mut self) {
        self.alive = false;
    }

    /// Gradient of the loss at the current parameters, stamped with this replica's clock.
    pub fn calculate_gradient(&self, batch_id: u64, pairs: &[TrainingPair]) -> Result<(f64, GradientUpdate), ModelError> {
        let (loss, delta) = self.learner.loss_and_gradient(&self.theta, pairs)?;
        if !delta.is_finite() {
            return Err(ModelError::NonFiniteGradient { batch_id });
        }
        Ok((
            loss,
            GradientUpdate {
                origin: self.rank,
                origin_seq: self.local_seq + 1,
                origin_clock: self.applied.clone(),
                delta,
                batch_id,
            },
        ))
    }

    /// `theta <- theta - alpha * delta`, then advances the clock entry of the origin.
    pub fn apply_gradient(&mut self, g: &GradientUpdate, wall_ts: u64) -> Result<StalenessRecord, ModelError> {
        if !self.alive {
            return Err(ModelError::NotAlive);
        }
        let staleness = compute_staleness(&self.applied, &g.origin_clock)?;
        if g.origin.index() >= self.applied.len() {
            return Err(ModelError::MismatchedRankSets { left: self.applied.len(), right: g.origin.index() + 1 });
        }
        let expected = self.applied.get(g.origin) + 1;
        if g.origin_seq != expected {
            return Err(ModelError::OutOfOrder { origin: g.origin.0, expected, got: g.origin_seq });
        }
        if cfg!(debug_assertions) {
            assert!(self.seen.insert((g.origin.0, g.origin_seq)), "gradient applied twice");
        }
        apply_delta(self.theta.as_mut_slice(), &g.delta, self.alpha)?;
        self.applied.increment(g.origin);
        Ok(StalenessRecord {
            applier: self.rank.0,
            origin: g.origin.0,
            origin_seq: g.origin_seq,
            staleness,
            wall_ts,
        })
    }

    /// Computes a gradient on `pairs`, applies it locally and buffers it for broadcast.
    pub fn train_local(&mut self, batch_id: u64, pairs: &[TrainingPair], wall_ts: u64) -> Result<LocalStep, ModelError> {
        if !self.alive {
            return Err(ModelError::NotAlive);
        }
        let (loss, g) = self.calculate_gradient(batch_id, pairs)?;
        let record = self.apply_gradient(&g, wall_ts)?;
        self.local_seq += 1;
        let update = Arc::new(g);
        self.buffer.push(update.clone());
        let flushed = if self.buffer.len() >= self.max_grad_buffer { self.flush() } else { Vec::new() };
        Ok(LocalStep { loss, update, record, flushed })
    }

    /// Empties the outgoing buffer, in computation order.
    pub fn flush(&mut self) -> Vec<Arc<GradientUpdate>> {
        std::mem::take(&mut self.buffer)
    }

    /// Inference on the current parameters; never mutates them.
    pub fn predict(&self, input: &PredictInput) -> Result<Vec<f32>, ModelError> {
        Ok(self.learner.predict(&self.theta, input)?)
    }
}

/// In-place SGD step. Sparse rows touch only their own slice of `theta`.
pub fn apply_delta(theta: &mut [f32], delta: &Delta, alpha: f32) -> Result<(), ModelError> {
    match delta {
        Delta::Dense(g) => {
            if g.len() != theta.len() {
                return Err(ModelError::DimensionMismatch { expected: theta.len(), got: g.len() });
            }
            for (t, &d) in theta.iter_mut().zip(g) {
                *t -= alpha * d;
            }
        }
        Delta::Sparse(rows) => {
            for r in rows {
                let (start, end) = row_range(r, theta.len())
                    .map_err(|_| ModelError::DimensionMismatch { expected: theta.len(), got: (r.index as usize + 1) * r.values.len() })?;
                for (t, &d) in theta[start..end].iter_mut().zip(&r.values) {
                    *t -= alpha * d;
                }
            }
        }
    }
    Ok(())
}
