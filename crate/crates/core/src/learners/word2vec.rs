use std::collections::BTreeMap;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::uniform;
use super::{nonempty, sigmoid, softplus, Delta, Learner, LearnerError, ParamStore, SparseRow, TrainingPair};
use crate::dataflow::PredictInput;

/// Skip-gram with negative sampling.
///
/// Parameters are the input embeddings (`V x d`, rows `0..V`) followed by the
/// output embeddings (`V x d`, rows `V..2V`). Gradients are sparse and touch
/// only the rows of tokens present in the batch.
#[derive(Clone, Debug)]
pub struct Word2Vec {
    vocab: u32,
    dim: usize,
    seed: u64,
}

impl Word2Vec {
    pub fn new(vocab: u32, dim: usize, seed: u64) -> Self {
        assert!(vocab > 0 && dim > 0);
        Self { vocab, dim, seed }
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, batch: &[TrainingPair]) -> Result<(), LearnerError> {
        nonempty(batch)?;
        for p in batch {
            match p {
                TrainingPair::Skipgram { center, context, label } => {
                    for &t in [center, context] {
                        if t >= self.vocab {
                            return Err(LearnerError::OutOfRange {
                                what: "token id",
                                value: u64::from(t),
                                limit: u64::from(self.vocab),
                            });
                        }
                    }
                    if *label > 1 {
                        return Err(LearnerError::OutOfRange { what: "label", value: u64::from(*label), limit: 2 });
                    }
                }
                other => {
                    return Err(LearnerError::WrongPairKind { learner: "word2vec", pair: other.kind_name() });
                }
            }
        }
        Ok(())
    }

    /// Mean loss and, if requested, per-row gradients keyed by global row index.
    fn kernel<F: Float>(
        &self,
        p: &[F],
        batch: &[TrainingPair],
        want_grad: bool,
    ) -> Result<(F, BTreeMap<u32, Vec<F>>), LearnerError> {
        self.check(batch)?;
        if p.len() != self.param_count() {
            return Err(LearnerError::DimensionMismatch { expected: self.param_count(), got: p.len() });
        }
        let d = self.dim;
        let n = F::from(batch.len()).unwrap();
        let mut total = F::zero();
        let mut rows: BTreeMap<u32, Vec<F>> = BTreeMap::new();
        for pair in batch {
            let TrainingPair::Skipgram { center, context, label } = pair else { unreachable!() };
            let vi = *center as usize * d;
            let ui = (self.vocab + context) as usize * d;
            let v = &p[vi..vi + d];
            let u = &p[ui..ui + d];
            let s = v.iter().zip(u).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
            let y = if *label == 1 { F::one() } else { F::zero() };
            total = total + if *label == 1 { softplus(-s) } else { softplus(s) };
            if want_grad {
                let g = (sigmoid(s) - y) / n;
                let gv: Vec<F> = u.iter().map(|&x| g * x).collect();
                let gu: Vec<F> = v.iter().map(|&x| g * x).collect();
                add_row(&mut rows, *center, gv);
                add_row(&mut rows, self.vocab + context, gu);
            }
        }
        Ok((total / n, rows))
    }
}

fn add_row<F: Float>(rows: &mut BTreeMap<u32, Vec<F>>, index: u32, values: Vec<F>) {
    match rows.get_mut(&index) {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(values) {
                *a = *a + v;
            }
        }
        None => {
            rows.insert(index, values);
        }
    }
}

impl Learner for Word2Vec {
    fn name(&self) -> &'static str {
        "word2vec"
    }

    fn param_count(&self) -> usize {
        2 * self.vocab as usize * self.dim
    }

    fn init_params(&self) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let v = self.vocab as usize;
        let mut p = ParamStore::new();
        let limit = 0.5 / self.dim as f64;
        p.push("input_embeddings", vec![v, self.dim], uniform(&mut rng, v * self.dim, limit));
        p.push("output_embeddings", vec![v, self.dim], vec![0.0; v * self.dim]);
        p
    }

    fn loss(&self, params: &ParamStore<f32>, batch: &[TrainingPair]) -> Result<f64, LearnerError> {
        self.kernel(params.as_slice(), batch, false).map(|(l, _)| f64::from(l))
    }

    fn loss_and_gradient(
        &self,
        params: &ParamStore<f32>,
        batch: &[TrainingPair],
    ) -> Result<(f64, Delta), LearnerError> {
        let (l, rows) = self.kernel(params.as_slice(), batch, true)?;
        let rows = rows.into_iter().map(|(index, values)| SparseRow { index, values }).collect();
        Ok((f64::from(l), Delta::Sparse(rows)))
    }

    fn loss_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<f64, LearnerError> {
        self.kernel(params.as_slice(), batch, false).map(|(l, _)| l)
    }

    fn gradient_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<Vec<f64>, LearnerError> {
        let (_, rows) = self.kernel(params.as_slice(), batch, true)?;
        let mut out = vec![0.0; self.param_count()];
        for (index, values) in rows {
            let start = index as usize * self.dim;
            out[start..start + self.dim].copy_from_slice(&values);
        }
        Ok(out)
    }

    fn predict(&self, params: &ParamStore<f32>, input: &PredictInput) -> Result<Vec<f32>, LearnerError> {
        match input {
            PredictInput::Token(t) if *t < self.vocab => {
                let start = *t as usize * self.dim;
                Ok(params.as_slice()[start..start + self.dim].to_vec())
            }
            PredictInput::Token(t) => Err(LearnerError::OutOfRange {
                what: "token id",
                value: u64::from(*t),
                limit: u64::from(self.vocab),
            }),
            PredictInput::Features(_) => Err(LearnerError::UnsupportedInput("word2vec")),
        }
    }

    fn shard_key(&self, batch: &[TrainingPair], batch_id: u64) -> Vec<u8> {
        match batch.first() {
            Some(p @ TrainingPair::Skipgram { .. }) => p.shard_key(),
            _ => batch_id.to_le_bytes().to_vec(),
        }
    }

    fn gradient_cost_ns(&self, batch_len: usize) -> u64 {
        2_000 + (batch_len * self.dim * 6) as u64
    }
}
