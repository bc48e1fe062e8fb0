use super::{nonempty, Delta, Learner, LearnerError, ParamStore, TrainingPair};
use crate::dataflow::PredictInput;

/// `L(theta) = 0.5 * |theta - c|^2`, independent of the batch contents.
#[derive(Clone, Debug)]
pub struct QuadraticToy {
    target: Vec<f32>,
}

impl QuadraticToy {
    pub fn new(target: Vec<f32>) -> Self {
        assert!(!target.is_empty());
        Self { target }
    }

    pub fn target(&self) -> &[f32] {
        &self.target
    }

    fn check_len(&self, got: usize) -> Result<(), LearnerError> {
        if got != self.target.len() {
            return Err(LearnerError::DimensionMismatch { expected: self.target.len(), got });
        }
        Ok(())
    }
}

impl Learner for QuadraticToy {
    fn name(&self) -> &'static str {
        "quadratic_toy"
    }

    fn param_count(&self) -> usize {
        self.target.len()
    }

    fn init_params(&self) -> ParamStore<f32> {
        let mut p = ParamStore::new();
        p.push("theta", vec![self.target.len()], vec![0.0; self.target.len()]);
        p
    }

    fn loss(&self, params: &ParamStore<f32>, batch: &[TrainingPair]) -> Result<f64, LearnerError> {
        self.loss_f64(&params.to_f64(), batch)
    }

    fn loss_and_gradient(
        &self,
        params: &ParamStore<f32>,
        batch: &[TrainingPair],
    ) -> Result<(f64, Delta), LearnerError> {
        let l = self.loss(params, batch)?;
        let g = params.as_slice().iter().zip(&self.target).map(|(a, c)| a - c).collect();
        Ok((l, Delta::Dense(g)))
    }

    fn loss_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<f64, LearnerError> {
        nonempty(batch)?;
        self.check_len(params.len())?;
        let s: f64 = params.as_slice().iter().zip(&self.target).map(|(a, &c)| (a - f64::from(c)).powi(2)).sum();
        Ok(0.5 * s)
    }

    fn gradient_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<Vec<f64>, LearnerError> {
        nonempty(batch)?;
        self.check_len(params.len())?;
        Ok(params.as_slice().iter().zip(&self.target).map(|(a, &c)| a - f64::from(c)).collect())
    }

    fn predict(&self, params: &ParamStore<f32>, _input: &PredictInput) -> Result<Vec<f32>, LearnerError> {
        Ok(params.as_slice().to_vec())
    }

    fn gradient_cost_ns(&self, _batch_len: usize) -> u64 {
        200 + self.target.len() as u64
    }
}

/// `L(theta) = mean_i <g_i, theta>` where `g_i` are the pair features.
///
/// The gradient is the mean feature vector and does not depend on theta, so
/// replicas that apply the same set of gradients end with the same
/// parameters whatever the order, provided the values are exactly representable.
#[derive(Clone, Debug)]
pub struct Linear {
    dim: usize,
}

impl Linear {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }

    fn features<'a>(&self, batch: &'a [TrainingPair]) -> Result<Vec<&'a [f32]>, LearnerError> {
        nonempty(batch)?;
        batch
            .iter()
            .map(|p| match p {
                TrainingPair::Labeled { features, .. } if features.len() == self.dim => Ok(features.as_slice()),
                TrainingPair::Labeled { features, .. } => {
                    Err(LearnerError::DimensionMismatch { expected: self.dim, got: features.len() })
                }
                other => Err(LearnerError::WrongPairKind { learner: "linear", pair: other.kind_name() }),
            })
            .collect()
    }
}

impl Learner for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn param_count(&self) -> usize {
        self.dim
    }

    fn init_params(&self) -> ParamStore<f32> {
        let mut p = ParamStore::new();
        p.push("theta", vec![self.dim], vec![0.0; self.dim]);
        p
    }

    fn loss(&self, params: &ParamStore<f32>, batch: &[TrainingPair]) -> Result<f64, LearnerError> {
        self.loss_f64(&params.to_f64(), batch)
    }

    fn loss_and_gradient(
        &self,
        params: &ParamStore<f32>,
        batch: &[TrainingPair],
    ) -> Result<(f64, Delta), LearnerError> {
        let feats = self.features(batch)?;
        let mut g = vec![0.0f32; self.dim];
        for f in &feats {
            for (a, &x) in g.iter_mut().zip(f.iter()) {
                *a += x;
            }
        }
        let n = feats.len() as f32;
        g.iter_mut().for_each(|a| *a /= n);
        Ok((self.loss(params, batch)?, Delta::Dense(g)))
    }

    fn loss_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<f64, LearnerError> {
        let g = self.gradient_f64(params, batch)?;
        Ok(g.iter().zip(params.as_slice()).map(|(a, b)| a * b).sum())
    }

    fn gradient_f64(&self, params: &ParamStore<f64>, batch: &[TrainingPair]) -> Result<Vec<f64>, LearnerError> {
        if params.len() != self.dim {
            return Err(LearnerError::DimensionMismatch { expected: self.dim, got: params.len() });
        }
        let feats = self.features(batch)?;
        let mut g = vec![0.0f64; self.dim];
        for f in &feats {
            for (a, &x) in g.iter_mut().zip(f.iter()) {
                *a += f64::from(x);
            }
        }
        let n = feats.len() as f64;
        Ok(g.into_iter().map(|a| a / n).collect())
    }

    fn predict(&self, params: &ParamStore<f32>, input: &PredictInput) -> Result<Vec<f32>, LearnerError> {
        match input {
            PredictInput::Features(x) if x.len() == self.dim => {
                Ok(vec![x.iter().zip(params.as_slice()).map(|(a, b)| a * b).sum()])
            }
            PredictInput::Features(x) => Err(LearnerError::DimensionMismatch { expected: self.dim, got: x.len() }),
            PredictInput::Token(_) => Err(LearnerError::UnsupportedInput("linear")),
        }
    }

    fn gradient_cost_ns(&self, batch_len: usize) -> u64 {
        200 + (batch_len * self.dim) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testutil::{fd_gradient, rel_error};

    fn any_batch() -> Vec<TrainingPair> {
        vec![TrainingPair::Labeled { features: vec![0.0; 3], label: 0 }]
    }

    #[test]
    fn toy_minimum_and_gradient() {
        let t = QuadraticToy::new(vec![1.0, -2.0, 0.5]);
        let mut p = t.init_params();
        assert!(p.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(t.gradient(&p, &any_batch()).unwrap(), Delta::Dense(vec![-1.0, 2.0, -0.5]));
        p.as_mut_slice().copy_from_slice(&[1.0, -2.0, 0.5]);
        assert_eq!(t.loss(&p, &any_batch()).unwrap(), 0.0);
        assert_eq!(t.gradient(&p, &any_batch()).unwrap(), Delta::Dense(vec![0.0; 3]));
    }

    #[test]
    fn toy_sgd_closed_form() {
        let c = [0.75f64, -1.5, 2.0];
        let alpha = 0.1f64;
        let t = QuadraticToy::new(c.iter().map(|&x| x as f32).collect());
        let mut theta = vec![0.0f64; 3];
        let d0 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        for step in 1..=50 {
            let mut p = ParamStore::new();
            p.push("theta", vec![3], theta.clone());
            let g = t.gradient_f64(&p, &any_batch()).unwrap();
            theta.iter_mut().zip(&g).for_each(|(a, b)| *a -= alpha * b);
            let dist = theta.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((dist - (1.0 - alpha).powi(step) * d0).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_gradient_is_mean_feature() {
        let l = Linear::new(2);
        let batch = vec![
            TrainingPair::Labeled { features: vec![0.5, -0.25], label: 0 },
            TrainingPair::Labeled { features: vec![0.25, 0.75], label: 0 },
        ];
        let p = l.init_params();
        assert_eq!(l.gradient(&p, &batch).unwrap(), Delta::Dense(vec![0.375, 0.25]));
        let p64 = p.map(|_| 0.3f64);
        assert!(rel_error(&l.gradient_f64(&p64, &batch).unwrap(), &fd_gradient(&l, &p64, &batch, 1e-4)) < 1e-9);
    }
}
