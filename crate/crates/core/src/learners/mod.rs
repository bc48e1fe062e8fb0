//! Trainable models plugged into the model operator.
//!
//! Every learner exposes its loss and its exact analytic gradient over a
//! [`ParamStore`]. Parameters live in `f32`; the `*_f64` methods evaluate the
//! same math in double precision for finite-difference checking.

mod dense;
mod params;
mod toy;
mod vocab;
mod word2vec;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::PredictInput;

pub use dense::DenseClassifier;
pub use params::{Delta, ParamStore, Segment, SparseRow};
pub use toy::{Linear, QuadraticToy};
pub use vocab::{
    make_pairs_word2vec, pairs_for_sentence, read_embeddings, write_embeddings, EmbeddingSnapshot,
    NegativeSampler, Vocabulary,
};
pub use word2vec::Word2Vec;

pub(crate) use params::row_range;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("{what} {value} out of range (limit {limit})")]
    OutOfRange { what: &'static str, value: u64, limit: u64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{learner} cannot train on {pair} pairs")]
    WrongPairKind { learner: &'static str, pair: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),
    #[error("unsupported prediction input for {0}")]
    UnsupportedInput(&'static str),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for LearnerError {
    fn from(e: std::io::Error) -> Self {
        LearnerError::Io(e.to_string())
    }
}

/// One supervised example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainingPair {
    /// Skip-gram pair; `label` is 1 for an observed context word, 0 for a negative sample.
    Skipgram { center: u32, context: u32, label: u8 },
    Labeled { features: Vec<f32>, label: u32 },
}

impl TrainingPair {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TrainingPair::Skipgram { .. } => "skip-gram",
            TrainingPair::Labeled { .. } => "labeled",
        }
    }

    pub fn shard_key(&self) -> Vec<u8> {
        match self {
            TrainingPair::Skipgram { center, .. } => center.to_le_bytes().to_vec(),
            TrainingPair::Labeled { label, .. } => label.to_le_bytes().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Word2vec {
        vocab_size: u32,
        dim: usize,
        #[serde(default = "default_negatives")]
        negatives: usize,
        #[serde(default = "default_window")]
        window: usize,
    },
    DenseClassifier {
        input_dim: usize,
        #[serde(default)]
        hidden: Option<usize>,
        classes: usize,
    },
    QuadraticToy { target: Vec<f32> },
    /// Loss `mean_i <g_i, theta>` whose gradient does not depend on theta.
    Linear { dim: usize },
}

fn default_negatives() -> usize {
    5
}

fn default_window() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    #[serde(flatten)]
    pub kind: LearnerKind,
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidSpec(m.to_string()));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        match &self.kind {
            LearnerKind::Word2vec { vocab_size, dim, .. } => {
                if *vocab_size == 0 || *dim == 0 {
                    return bad("vocab_size and dim must be positive");
                }
            }
            LearnerKind::DenseClassifier { input_dim, hidden, classes } => {
                if *input_dim == 0 || *classes == 0 || *hidden == Some(0) {
                    return bad("layer sizes must be positive");
                }
            }
            LearnerKind::QuadraticToy { target } => {
                if target.is_empty() || target.iter().any(|x| !x.is_finite()) {
                    return bad("target must be a nonempty finite vector");
                }
            }
            LearnerKind::Linear { dim } => {
                if *dim == 0 {
                    return bad("dim must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Learner>, LearnerError> {
        self.validate()?;
        Ok(match &self.kind {
            LearnerKind::Word2vec { vocab_size, dim, .. } => {
                Arc::new(Word2Vec::new(*vocab_size, *dim, self.seed))
            }
            LearnerKind::DenseClassifier { input_dim, hidden, classes } => {
                Arc::new(DenseClassifier::new(*input_dim, *hidden, *classes, self.seed))
            }
            LearnerKind::QuadraticToy { target } => Arc::new(QuadraticToy::new(target.clone())),
            LearnerKind::Linear { dim } => Arc::new(Linear::new(*dim)),
        })
    }
}

/// Contract between a model replica and its learner.
pub trait Learner: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn param_count(&self) -> usize;

    /// Fresh parameters; a pure function of the learner's configuration and seed.
    fn init_params(&self) -> ParamStore<f32>;

    /// Mean per-pair loss.
    fn loss(&self, params: &ParamStore<f32>, batch: &[TrainingPair]) -> Result<f64, LearnerError>;

    /// Mean loss together with its gradient.
    fn loss_and_gradient(
        &self,
        params: &ParamStore<f32>,
        batch: &[TrainingPair],
    ) -> Result<(f64, Delta), LearnerError>;

    fn gradient(&self, params: &ParamStore<f32>, batch: &[TrainingPair]) -> Result<Delta, LearnerError> {
        self.loss_and_gradient(params, batch).map(|(_, d)| d)
    }

    fn loss_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<f64, LearnerError>;

    /// Dense gradient evaluated in double precision.
    fn gradient_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<Vec<f64>, LearnerError>;

    fn predict(&self, params: &ParamStore<f32>, input: &PredictInput) -> Result<Vec<f32>, LearnerError>;

    /// Key by which a mini-batch is hash-partitioned across model ranks.
    fn shard_key(&self, batch: &[TrainingPair], batch_id: u64) -> Vec<u8> {
        let _ = batch;
        batch_id.to_le_bytes().to_vec()
    }

    /// Simulated cost of one gradient calculation, in nanoseconds.
    fn gradient_cost_ns(&self, batch_len: usize) -> u64;
}

/// Learning rate adjusted for `n_ranks` replicas applying each other's gradients.
pub fn scale_learning_rate(alpha: f64, n_ranks: u32) -> f64 {
    assert!(n_ranks >= 1, "at least one rank");
    alpha * f64::from(n_ranks)
}

pub(crate) fn nonempty(batch: &[TrainingPair]) -> Result<(), LearnerError> {
    if batch.is_empty() {
        Err(LearnerError::EmptyBatch)
    } else {
        Ok(())
    }
}

pub(crate) fn softplus<F: num_traits::Float>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<F: num_traits::Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Central finite-difference gradient of `loss_f64`.
    pub fn fd_gradient(l: &dyn Learner, p: &ParamStore<f64>, batch: &[TrainingPair], h: f64) -> Vec<f64> {
        let base = p.as_slice().to_vec();
        (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                plus[i] += h;
                let mut minus = base.clone();
                minus[i] -= h;
                let lp = l.loss_f64(&p.with_values(plus), batch).unwrap();
                let lm = l.loss_f64(&p.with_values(minus), batch).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_scaling() {
        assert_eq!(scale_learning_rate(0.01, 4), 0.04);
        assert_eq!(scale_learning_rate(0.37, 1), 0.37);
        for &a in &[0.01, 0.3, 1e-5, 0.123456789] {
            for n in 1..=16u32 {
                let back = scale_learning_rate(a, n) / f64::from(n);
                assert!((back - a).abs() <= f64::EPSILON * a, "{a} {n}");
            }
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = LearnerSpec {
            kind: LearnerKind::Word2vec { vocab_size: 10, dim: 4, negatives: 2, window: 1 },
            alpha: 0.1,
            seed: 1,
        };
        assert!(s.build().is_ok());
        s.alpha = 0.0;
        assert!(matches!(s.build(), Err(LearnerError::InvalidSpec(_))));
        s.alpha = 0.1;
        s.kind = LearnerKind::DenseClassifier { input_dim: 0, hidden: None, classes: 3 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = LearnerSpec {
            kind: LearnerKind::DenseClassifier { input_dim: 8, hidden: Some(16), classes: 4 },
            alpha: 0.05,
            seed: 9,
        };
        let text = toml::to_string(&s).unwrap();
        let back: LearnerSpec = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn stable_logistic_helpers() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(1000.0f64).is_finite());
        assert!((sigmoid(-800.0f64)).abs() < 1e-300);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }
}
