use std::collections::VecDeque;
use std::sync::Arc;

use super::{GradientUpdate, ModelError, ModelReplica, StalenessRecord};
use crate::dataflow::RankId;
use crate::learners::{Learner, TrainingPair};

/// One event of a hand-written delivery schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScriptStep {
    /// `rank` trains on a local mini-batch.
    Compute { rank: u32, batch_id: u64 },
    /// The oldest undelivered gradient on channel `from -> to` is applied by `to`.
    Deliver { from: u32, to: u32 },
}

/// Model replicas driven by an explicit schedule instead of an executor.
#[derive(Debug)]
pub struct ScriptedCluster {
    replicas: Vec<ModelReplica>,
    channels: Vec<Vec<VecDeque<Arc<GradientUpdate>>>>,
    logs: Vec<Vec<StalenessRecord>>,
    clock: u64,
}

impl ScriptedCluster {
    pub fn new(n: u32, learner: Arc<dyn Learner>, alpha: f64, max_grad_buffer: usize) -> Self {
        let replicas = (0..n)
            .map(|r| ModelReplica::new(RankId(r), n, learner.clone(), alpha, max_grad_buffer))
            .collect();
        let n = n as usize;
        Self {
            replicas,
            channels: vec![vec![VecDeque::new(); n]; n],
            logs: vec![Vec::new(); n],
            clock: 0,
        }
    }

    pub fn replicas(&self) -> &[ModelReplica] {
        &self.replicas
    }

    /// Per-rank application logs.
    pub fn logs(&self) -> &[Vec<StalenessRecord>] {
        &self.logs
    }

    /// Records in global execution order.
    pub fn step(&mut self, s: ScriptStep, pairs: &[TrainingPair]) -> Result<StalenessRecord, ModelError> {
        self.clock += 1;
        let rec = match s {
            ScriptStep::Compute { rank, batch_id } => {
                let r = rank as usize;
                let out = self.replicas[r].train_local(batch_id, pairs, self.clock)?;
                for g in out.flushed {
                    for (to, ch) in self.channels[r].iter_mut().enumerate() {
                        if to != r {
                            ch.push_back(g.clone());
                        }
                    }
                }
                out.record
            }
            ScriptStep::Deliver { from, to } => {
                let g = self.channels[from as usize][to as usize]
                    .pop_front()
                    .ok_or(ModelError::NothingInFlight { from, to })?;
                self.replicas[to as usize].apply_gradient(&g, self.clock)?
            }
        };
        self.logs[rec.applier as usize].push(rec.clone());
        Ok(rec)
    }

    pub fn run(&mut self, script: &[ScriptStep], pairs: &[TrainingPair]) -> Result<Vec<StalenessRecord>, ModelError> {
        script.iter().map(|&s| self.step(s, pairs)).collect()
    }

    /// Gradients still in flight.
    pub fn undelivered(&self) -> usize {
        self.channels.iter().flatten().map(VecDeque::len).sum()
    }
}

/// Three replicas, five mini-batches, one gradient per broadcast.
///
/// Rank 0 trains on two batches back to back while ranks 1 and 2 each train
/// on one before having applied anything; rank 0 then applies rank 1's
/// gradient (staleness 2) and rank 2's (staleness 3). The remaining steps
/// drain every channel, with rank 1 training on the fifth batch midway.
pub fn three_rank_script() -> Vec<ScriptStep> {
    use ScriptStep::*;
    vec![
        Compute { rank: 0, batch_id: 1 },
        Compute { rank: 1, batch_id: 2 },
        Compute { rank: 2, batch_id: 3 },
        Compute { rank: 0, batch_id: 4 },
        Deliver { from: 1, to: 0 },
        Deliver { from: 2, to: 0 },
        Deliver { from: 0, to: 1 },
        Deliver { from: 2, to: 1 },
        Deliver { from: 0, to: 1 },
        Compute { rank: 1, batch_id: 5 },
        Deliver { from: 0, to: 2 },
        Deliver { from: 1, to: 2 },
        Deliver { from: 0, to: 2 },
        Deliver { from: 1, to: 2 },
        Deliver { from: 1, to: 0 },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::QuadraticToy;
    use crate::model::verify_staleness;

    #[test]
    fn worked_example_values() {
        let learner: Arc<dyn Learner> = Arc::new(QuadraticToy::new(vec![1.0, 2.0]));
        let mut c = ScriptedCluster::new(3, learner, 0.1, 1);
        let pairs = [TrainingPair::Labeled { features: vec![], label: 0 }];
        let recs = c.run(&three_rank_script(), &pairs).unwrap();
        let s: Vec<u64> = recs.iter().map(|r| r.staleness).collect();
        assert_eq!(&s[..6], &[0, 0, 0, 0, 2, 3]);
        assert!(recs.iter().filter(|r| r.origin == r.applier).all(|r| r.staleness == 0));
        assert_eq!(c.undelivered(), 0);
        let clocks: Vec<_> = c.replicas().iter().map(|r| r.clock().clone()).collect();
        assert!(clocks.iter().all(|k| k.as_slice() == [2, 2, 1]));
        assert_eq!(verify_staleness(c.logs()).unwrap(), recs.len());
    }
}
