use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::uniform;
use super::{nonempty, Delta, Learner, LearnerError, ParamStore, TrainingPair};
use crate::dataflow::PredictInput;

/// Softmax regression, or a one-hidden-layer tanh MLP when `hidden` is set.
///
/// Layout: `w1 [h x D], b1 [h], w2 [C x h], b2 [C]` with a hidden layer,
/// otherwise `w [C x D], b [C]`.
#[derive(Clone, Debug)]
pub struct DenseClassifier {
    input_dim: usize,
    hidden: Option<usize>,
    classes: usize,
    seed: u64,
}

struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

impl DenseClassifier {
    pub fn new(input_dim: usize, hidden: Option<usize>, classes: usize, seed: u64) -> Self {
        assert!(input_dim > 0 && classes > 0 && hidden != Some(0));
        Self { input_dim, hidden, classes, seed }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn layers(&self) -> Vec<Layer> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.hidden);
        dims.push(self.classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let l = Layer { w: offset, b: offset + w[0] * w[1], fan_in: w[0], fan_out: w[1] };
                offset += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    fn check_features(&self, x: &[f32]) -> Result<(), LearnerError> {
        if x.len() != self.input_dim {
            return Err(LearnerError::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        Ok(())
    }

    fn check(&self, batch: &[TrainingPair]) -> Result<(), LearnerError> {
        nonempty(batch)?;
        for p in batch {
            match p {
                TrainingPair::Labeled { features, label } => {
                    self.check_features(features)?;
                    if *label as usize >= self.classes {
                        return Err(LearnerError::OutOfRange {
                            what: "class id",
                            value: u64::from(*label),
                            limit: self.classes as u64,
                        });
                    }
                }
                other => {
                    return Err(LearnerError::WrongPairKind { learner: "dense classifier", pair: other.kind_name() })
                }
            }
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward<F: Float>(&self, p: &[F], x: &[f32]) -> Vec<Vec<F>> {
        let layers = self.layers();
        let mut acts = vec![x.iter().map(|&v| F::from(v).unwrap()).collect::<Vec<F>>()];
        for (li, l) in layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let mut out = Vec::with_capacity(l.fan_out);
            for o in 0..l.fan_out {
                let row = &p[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
                let z = row.iter().zip(input).fold(p[l.b + o], |acc, (&w, &a)| acc + w * a);
                out.push(if li + 1 < layers.len() { z.tanh() } else { z });
            }
            acts.push(out);
        }
        acts
    }

    fn kernel<F: Float>(&self, p: &[F], batch: &[TrainingPair], want_grad: bool) -> Result<(F, Vec<F>), LearnerError> {
        self.check(batch)?;
        if p.len() != self.param_count() {
            return Err(LearnerError::DimensionMismatch { expected: self.param_count(), got: p.len() });
        }
        let layers = self.layers();
        let n = F::from(batch.len()).unwrap();
        let mut grad = if want_grad { vec![F::zero(); p.len()] } else { Vec::new() };
        let mut total = F::zero();
        for pair in batch {
            let TrainingPair::Labeled { features, label } = pair else { unreachable!() };
            let acts = self.forward(p, features);
            let logits = acts.last().unwrap();
            let probs = softmax(logits);
            let m = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let lse = m + logits.iter().fold(F::zero(), |a, &z| a + (z - m).exp()).ln();
            total = total + lse - logits[*label as usize];
            if !want_grad {
                continue;
            }
            let mut delta: Vec<F> = probs
                .iter()
                .enumerate()
                .map(|(c, &pc)| (pc - if c == *label as usize { F::one() } else { F::zero() }) / n)
                .collect();
            for li in (0..layers.len()).rev() {
                let l = &layers[li];
                let input = &acts[li];
                for o in 0..l.fan_out {
                    grad[l.b + o] = grad[l.b + o] + delta[o];
                    for i in 0..l.fan_in {
                        let k = l.w + o * l.fan_in + i;
                        grad[k] = grad[k] + delta[o] * input[i];
                    }
                }
                if li > 0 {
                    delta = (0..l.fan_in)
                        .map(|i| {
                            let back = (0..l.fan_out)
                                .fold(F::zero(), |acc, o| acc + p[l.w + o * l.fan_in + i] * delta[o]);
                            back * (F::one() - input[i] * input[i])
                        })
                        .collect();
                }
            }
        }
        Ok((total / n, grad))
    }
}

fn softmax<F: Float>(z: &[F]) -> Vec<F> {
    let m = z.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<F> = z.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().fold(F::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

impl Learner for DenseClassifier {
    fn name(&self) -> &'static str {
        "dense_classifier"
    }

    fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum()
    }

    fn init_params(&self) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut p = ParamStore::new();
        let layers = self.layers();
        for (i, l) in layers.iter().enumerate() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            let w = uniform(&mut rng, l.fan_in * l.fan_out, limit);
            p.push(format!("w{}", i + 1), vec![l.fan_out, l.fan_in], w);
            p.push(format!("b{}", i + 1), vec![l.fan_out], vec![0.0; l.fan_out]);
        }
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
        let (l, g) = self.kernel(params.as_slice(), batch, true)?;
        Ok((f64::from(l), Delta::Dense(g)))
    }

    fn loss_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<f64, LearnerError> {
        self.kernel(params.as_slice(), batch, false).map(|(l, _)| l)
    }

    fn gradient_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<Vec<f64>, LearnerError> {
        self.kernel(params.as_slice(), batch, true).map(|(_, g)| g)
    }

    fn predict(&self, params: &ParamStore<f32>, input: &PredictInput) -> Result<Vec<f32>, LearnerError> {
        match input {
            PredictInput::Features(x) => {
                self.check_features(x)?;
                if params.len() != self.param_count() {
                    return Err(LearnerError::DimensionMismatch { expected: self.param_count(), got: params.len() });
                }
                let acts = self.forward(params.as_slice(), x);
                Ok(softmax(acts.last().unwrap()))
            }
            PredictInput::Token(_) => Err(LearnerError::UnsupportedInput("dense classifier")),
        }
    }

    fn gradient_cost_ns(&self, batch_len: usize) -> u64 {
        1_000 + (batch_len * self.param_count() * 4) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testutil::{fd_gradient, rel_error};
    use rand::Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, c: u32) -> Vec<TrainingPair> {
        (0..n)
            .map(|_| TrainingPair::Labeled {
                features: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                label: rng.random_range(0..c),
            })
            .collect()
    }

    #[test]
    fn glorot_init_and_zero_biases() {
        let m = DenseClassifier::new(6, Some(5), 3, 1);
        let p = m.init_params();
        assert_eq!(p.len(), m.param_count());
        assert_eq!(p.len(), 6 * 5 + 5 + 5 * 3 + 3);
        assert!(p.tensor("b1").unwrap().iter().all(|&x| x == 0.0));
        let lim = (6.0f32 / 11.0).sqrt();
        assert!(p.tensor("w1").unwrap().iter().all(|&x| x.abs() <= lim));
        assert_eq!(p, m.init_params());
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let m = DenseClassifier::new(3, None, 4, 0);
        let p = m.init_params().map(|_| 0.0f32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = random_batch(&mut rng, 5, 3, 4);
        assert!((m.loss(&p, &batch).unwrap() - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for hidden in [None, Some(4)] {
            let m = DenseClassifier::new(3, hidden, 3, 2);
            for _ in 0..5 {
                let p: ParamStore<f64> = m.init_params().map(|_| rng.random_range(-1.0..1.0));
                let batch = random_batch(&mut rng, 4, 3, 3);
                let g = m.gradient_f64(&p, &batch).unwrap();
                let fd = fd_gradient(&m, &p, &batch, 1e-4);
                assert!(rel_error(&g, &fd) < 1e-4, "{hidden:?}");
            }
        }
    }

    #[test]
    fn predictions_are_distributions() {
        let m = DenseClassifier::new(4, Some(8), 5, 3);
        let p = m.init_params();
        let x = PredictInput::Features(vec![0.3, -1.0, 2.0, 0.5]);
        let a = m.predict(&p, &x).unwrap();
        assert_eq!(a.len(), 5);
        assert!((a.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(a, m.predict(&p, &x).unwrap());
        assert!(m.predict(&p, &PredictInput::Features(vec![1.0])).is_err());
    }

    #[test]
    fn class_out_of_range() {
        let m = DenseClassifier::new(2, None, 2, 0);
        let bad = [TrainingPair::Labeled { features: vec![0.0, 0.0], label: 2 }];
        assert!(matches!(m.loss(&m.init_params(), &bad), Err(LearnerError::OutOfRange { .. })));
    }
}
