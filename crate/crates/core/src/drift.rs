//! Synthetic concept drift: move chosen tokens to another topic part-way
//! through a stream and measure how far their embeddings travel.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::{EngineError, Executor, Mode};
use crate::datasets::{token_counts, CorpusSpec};
use crate::learners::{EmbeddingSnapshot, Learner, NegativeSampler, ParamStore, Word2Vec};
use crate::model::ModelConfig;
use crate::session::TrainJob;
use crate::stream::{Dataset, GeneratorConfig, Passes, SkipGram};

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("cosine difference of a zero-norm vector")]
    ZeroNorm,
    #[error("vectors of length {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid drift scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Learner(#[from] crate::learners::LearnerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_difference(a: &[f32], b: &[f32]) -> Result<f64, DriftError> {
    if a.len() != b.len() {
        return Err(DriftError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(DriftError::ZeroNorm);
    }
    Ok((1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0))
}

/// What happens to the shifted tokens after the drift point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shift {
    /// Nothing changes; used for controls.
    Identity,
    /// Each shifted token leaves topic `z` for topic `(z + offset) % topics`.
    Rotate { offset: u32 },
}

/// A sentence stream whose first `drift_time` sentences follow the base topic
/// model and whose remainder follows the shifted one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftScenario {
    /// `corpus.sentences` is the full stream length.
    pub corpus: CorpusSpec,
    pub drift_time: usize,
    pub shifted_tokens: Vec<u32>,
    pub shift: Shift,
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub batch_size: usize,
    pub alpha: f64,
    /// Passes over the pre-drift prefix before the snapshot.
    pub pretrain_passes: u64,
    /// Passes over the post-drift suffix.
    pub finetune_passes: u64,
    pub top_k: usize,
}

impl Default for DriftScenario {
    fn default() -> Self {
        let corpus = CorpusSpec { vocab_size: 200, topics: 10, sentence_len: 10, sentences: 3000, noise: 0.05, seed: 1 };
        // The most frequent word of every other topic.
        let shifted = (0..corpus.topics).step_by(2).map(|z| z * corpus.vocab_size / corpus.topics).collect();
        Self {
            corpus,
            drift_time: 2000,
            shifted_tokens: shifted,
            shift: Shift::Rotate { offset: 1 },
            dim: 16,
            window: 2,
            negatives: 5,
            batch_size: 64,
            alpha: 1.0,
            pretrain_passes: 2,
            finetune_passes: 2,
            top_k: 10,
        }
    }
}

impl DriftScenario {
    pub fn validate(&self) -> Result<(), DriftError> {
        let bad = |m: &str| Err(DriftError::InvalidScenario(m.into()));
        if self.drift_time == 0 || self.drift_time >= self.corpus.sentences {
            return bad("drift time must fall strictly inside the stream");
        }
        if self.corpus.topics == 0 || self.corpus.topics > self.corpus.vocab_size {
            return bad("topics must be between 1 and the vocabulary size");
        }
        if let Some(t) = self.shifted_tokens.iter().find(|&&t| t >= self.corpus.vocab_size) {
            return Err(DriftError::InvalidScenario(format!("shifted token {t} outside the vocabulary")));
        }
        if self.pretrain_passes == 0 || self.finetune_passes == 0 {
            return bad("pass counts must be positive");
        }
        if self.dim == 0 || self.batch_size == 0 {
            return bad("dim and batch size must be positive");
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        Ok(())
    }

    pub fn shifted_membership(&self) -> Vec<u32> {
        let mut m = self.corpus.default_membership();
        if let Shift::Rotate { offset } = self.shift {
            for &t in &self.shifted_tokens {
                let z = &mut m[t as usize];
                *z = (*z + offset) % self.corpus.topics;
            }
        }
        m
    }

    /// The stream before and after the drift point.
    pub fn stream(&self) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let c = &self.corpus;
        let pre = c.generate_with(&c.default_membership(), self.drift_time, c.seed);
        let post = c.generate_with(&self.shifted_membership(), c.sentences - self.drift_time, c.seed ^ 0x5eed);
        (pre, post)
    }

    /// The same scenario without drift and with a fresh post-drift sample.
    pub fn control(&self) -> Self {
        let mut c = self.clone();
        c.shift = Shift::Identity;
        c.corpus.seed = self.corpus.seed.wrapping_add(1);
        c
    }
}

/// Execution settings shared by the two training phases.
#[derive(Clone, Debug)]
pub struct DriftEngine {
    pub n_ranks: u32,
    pub mode: Mode,
    pub executor: Executor,
    pub max_grad_buffer: usize,
    pub seed: u64,
}

impl Default for DriftEngine {
    fn default() -> Self {
        Self { n_ranks: 2, mode: Mode::Asgd, executor: Executor::deterministic(0), max_grad_buffer: 1, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenDrift {
    pub token: u32,
    pub cosine_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Ordered by token id. Tokens whose row has zero norm are left out.
    pub per_token: Vec<TokenDrift>,
    pub mean: f64,
    /// Largest differences first.
    pub top_k: Vec<TokenDrift>,
}

#[derive(Serialize)]
struct Summary<'a> {
    mean: f64,
    top_k: &'a [TokenDrift],
}

impl DriftReport {
    pub fn from_snapshots(before: &EmbeddingSnapshot, after: &EmbeddingSnapshot, k: usize) -> Result<Self, DriftError> {
        if before.vocab_size != after.vocab_size || before.dim != after.dim {
            return Err(DriftError::DimensionMismatch(before.values.len(), after.values.len()));
        }
        let mut per_token = Vec::with_capacity(before.vocab_size);
        for t in 0..before.vocab_size {
            match cosine_difference(before.row(t), after.row(t)) {
                Ok(d) => per_token.push(TokenDrift { token: t as u32, cosine_diff: d }),
                Err(DriftError::ZeroNorm) => {}
                Err(e) => return Err(e),
            }
        }
        let mean = if per_token.is_empty() {
            0.0
        } else {
            per_token.iter().map(|d| d.cosine_diff).sum::<f64>() / per_token.len() as f64
        };
        let mut top_k: Vec<TokenDrift> = per_token.iter().copied().filter(|d| d.cosine_diff.is_finite()).collect();
        top_k.sort_by(|a, b| b.cosine_diff.total_cmp(&a.cosine_diff).then(a.token.cmp(&b.token)));
        top_k.truncate(k);
        Ok(Self { per_token, mean, top_k })
    }

    pub fn std_dev(&self) -> f64 {
        let n = self.per_token.len();
        if n < 2 {
            return 0.0;
        }
        let var = self.per_token.iter().map(|d| (d.cosine_diff - self.mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    }

    /// Mean plus three standard deviations of the per-token differences.
    pub fn noise_floor(&self) -> f64 {
        self.mean + 3.0 * self.std_dev()
    }

    /// Medians of the differences inside and outside `tokens`.
    pub fn split_medians(&self, tokens: &[u32]) -> (f64, f64) {
        let set: BTreeSet<u32> = tokens.iter().copied().collect();
        let (mut inside, mut outside): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        for d in &self.per_token {
            if set.contains(&d.token) {
                inside.push(d.cosine_diff);
            } else {
                outside.push(d.cosine_diff);
            }
        }
        (median(&mut inside), median(&mut outside))
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "token,cosine_diff")?;
        for d in &self.per_token {
            writeln!(w, "{},{:.9}", d.token, d.cosine_diff)?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&Summary { mean: self.mean, top_k: &self.top_k }).expect("plain data serializes")
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Everything a drift run produces.
#[derive(Debug)]
pub struct DriftOutcome {
    pub report: DriftReport,
    pub before: EmbeddingSnapshot,
    pub after: EmbeddingSnapshot,
    pub pretrain_loss: f64,
    pub finetune_loss: f64,
}

fn train_phase(
    scenario: &DriftScenario,
    engine: &DriftEngine,
    learner: &Arc<dyn Learner>,
    sentences: Vec<Vec<u32>>,
    sampler: &Arc<NegativeSampler>,
    passes: u64,
    seed: u64,
    init: Option<Arc<ParamStore<f32>>>,
) -> Result<(ParamStore<f32>, f64), DriftError> {
    let skipgram = SkipGram { window: scenario.window, negatives: scenario.negatives, sampler: Some(sampler.clone()) };
    let mut job = TrainJob::new(
        learner.clone(),
        Dataset::Sentences { sentences: Arc::new(sentences), skipgram },
        engine.n_ranks,
    );
    job.generator =
        GeneratorConfig { batch_size: scenario.batch_size, passes: Passes::Finite(passes), seed, ..Default::default() };
    job.model = ModelConfig { alpha: scenario.alpha, max_grad_buffer: engine.max_grad_buffer, init, ..Default::default() };
    job.mode = engine.mode;
    job.executor = engine.executor.clone();
    let out = job.run()?;
    let loss = out.tail_loss(100);
    let params = out.models.into_iter().next().map(|m| m.params).ok_or(EngineError::Operator("no replicas".into()))?;
    Ok((params, loss))
}

/// Pre-trains on the stream up to the drift point, snapshots the input
/// embeddings, keeps training on the rest of the stream and compares the
/// final embeddings with the snapshot.
pub fn run_drift_experiment(scenario: &DriftScenario, engine: &DriftEngine) -> Result<DriftOutcome, DriftError> {
    scenario.validate()?;
    let (pre, post) = scenario.stream();
    let v = scenario.corpus.vocab_size;
    let sampler = Arc::new(NegativeSampler::new(&token_counts(&pre, v))?);
    let learner: Arc<dyn Learner> = Arc::new(Word2Vec::new(v, scenario.dim, engine.seed));

    let (theta, pretrain_loss) =
        train_phase(scenario, engine, &learner, pre, &sampler, scenario.pretrain_passes, engine.seed, None)?;
    let before = EmbeddingSnapshot::from_params(&theta)?;
    let (theta, finetune_loss) = train_phase(
        scenario,
        engine,
        &learner,
        post,
        &sampler,
        scenario.finetune_passes,
        engine.seed.wrapping_add(1),
        Some(Arc::new(theta)),
    )?;
    let after = EmbeddingSnapshot::from_params(&theta)?;
    let report = DriftReport::from_snapshots(&before, &after, scenario.top_k)?;
    Ok(DriftOutcome { report, before, after, pretrain_loss, finetune_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_difference_fixed_points() {
        assert_eq!(cosine_difference(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((cosine_difference(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!((cosine_difference(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(cosine_difference(&[0.0, 0.0], &[0.0, 1.0]), Err(DriftError::ZeroNorm)));
        assert!(matches!(cosine_difference(&[1.0], &[0.0, 1.0]), Err(DriftError::DimensionMismatch(1, 2))));
    }

    proptest! {
        #[test]
        fn cosine_difference_in_range(a in prop::collection::vec(-10.0f32..10.0, 4), b in prop::collection::vec(-10.0f32..10.0, 4)) {
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let d = cosine_difference(&a, &b).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
            let s = cosine_difference(&b, &a).unwrap();
            prop_assert!((d - s).abs() < 1e-12);
        }
    }

    fn snap(values: Vec<f32>, v: usize) -> EmbeddingSnapshot {
        let dim = values.len() / v;
        EmbeddingSnapshot { vocab_size: v, dim, values }
    }

    #[test]
    fn report_mean_and_top_k() {
        let before = snap(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0], 4);
        let after = snap(vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 1.0, 1.0], 4);
        let r = DriftReport::from_snapshots(&before, &after, 2).unwrap();
        // Token 3 has a zero row before the drift and is skipped.
        assert_eq!(r.per_token.len(), 3);
        assert!((r.mean - 1.0).abs() < 1e-12);
        assert_eq!(r.top_k.iter().map(|d| d.token).collect::<Vec<_>>(), vec![2, 1]);
        let (inside, outside) = r.split_medians(&[2]);
        assert_eq!(inside, 2.0);
        assert_eq!(outside, 0.5);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("token,cosine_diff\n0,0.000000000\n"));
        let json: serde_json::Value = serde_json::from_str(&r.summary_json()).unwrap();
        assert_eq!(json["top_k"][0]["token"], 2);
    }

    #[test]
    fn scenario_validation() {
        let mut s = DriftScenario::default();
        s.validate().unwrap();
        s.drift_time = s.corpus.sentences;
        assert!(s.validate().is_err());
        let mut s = DriftScenario::default();
        s.shifted_tokens.push(s.corpus.vocab_size);
        assert!(s.validate().is_err());
    }

    #[test]
    fn rotation_moves_only_shifted_tokens() {
        let s = DriftScenario::default();
        let base = s.corpus.default_membership();
        let moved = s.shifted_membership();
        for t in 0..s.corpus.vocab_size as usize {
            let shifted = s.shifted_tokens.contains(&(t as u32));
            assert_eq!(base[t] != moved[t], shifted, "token {t}");
        }
        assert_eq!(s.control().shifted_membership(), base);
    }

    #[test]
    fn small_run_is_deterministic_and_ordinal() {
        let mut s = DriftScenario::default();
        s.corpus.sentences = 900;
        s.drift_time = 600;
        let e = DriftEngine { n_ranks: 2, ..Default::default() };
        let a = run_drift_experiment(&s, &e).unwrap();
        let b = run_drift_experiment(&s, &e).unwrap();
        assert_eq!(a.report, b.report);
        let (inside, outside) = a.report.split_medians(&s.shifted_tokens);
        assert!(inside > outside, "{inside} vs {outside}");
    }
}
