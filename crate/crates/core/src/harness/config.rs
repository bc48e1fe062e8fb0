use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataflow::{Executor, Mode};
use crate::datasets::{dyadic_pairs, gaussian_blobs, token_counts, BlobSpec, CorpusSpec};
use crate::learners::{
    make_pairs_word2vec, scale_learning_rate, Learner, LearnerKind, LearnerSpec, NegativeSampler, TrainingPair,
    Vocabulary,
};
use crate::stream::{Dataset, SkipGram};

/// Environment variable overriding `seed`.
pub const SEED_ENV: &str = "AIRFLUX_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Sync,
    Asgd,
    Ssp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorKind {
    Deterministic,
    Threads,
}

/// Where training records come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// Synthetic topic corpus expanded into skip-gram pairs.
    Corpus {
        #[serde(flatten)]
        corpus: CorpusSpec,
    },
    /// Whitespace-tokenized text, one sentence per line.
    Text { path: PathBuf },
    /// Gaussian class blobs for the dense classifier.
    Blobs {
        #[serde(flatten)]
        blobs: BlobSpec,
    },
    /// Dyadic feature vectors for the linear learner.
    Dyadic { samples: usize, dim: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergeSection {
    pub ranks: Vec<u32>,
    /// Batches averaged for the final loss.
    pub tail: usize,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self { ranks: vec![1, 2, 4], tail: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedupSection {
    pub ranks: Vec<u32>,
    pub batch_sizes: Vec<usize>,
}

impl Default for SpeedupSection {
    fn default() -> Self {
        Self { ranks: vec![1, 2, 4], batch_sizes: vec![16, 64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThroughputSection {
    /// Offered rates in events per second. When empty, `rate_factors` are
    /// applied to a capacity probe instead.
    pub rates: Vec<f64>,
    pub rate_factors: Vec<f64>,
    pub window_ms: u64,
    pub warmup_ms: u64,
    pub achieved_factor: f64,
    pub growth_factor: f64,
    pub min_growth_ms: u64,
}

impl Default for ThroughputSection {
    fn default() -> Self {
        Self {
            rates: Vec::new(),
            rate_factors: vec![0.25, 0.5, 1.0, 2.0, 10.0],
            window_ms: 1_000,
            warmup_ms: 100,
            achieved_factor: 0.95,
            growth_factor: 1.5,
            min_growth_ms: 5,
        }
    }
}

/// Everything a harness command needs. Loaded from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: ModeName,
    /// Local gradients per replica between barriers in `ssp` mode.
    pub ssp_k: u64,
    pub n_ranks: u32,
    pub max_grad_buffer: usize,
    pub batch_size: usize,
    pub alpha: f64,
    /// Multiply `alpha` by the number of ranks.
    pub alpha_scaling: bool,
    pub passes: u64,
    pub max_batches: Option<u64>,
    pub executor: ExecutorKind,
    pub link_latency_ns: u64,
    pub jitter: f64,
    pub queue_capacity: usize,
    pub output_dir: PathBuf,
    pub learner: LearnerKind,
    pub data: DataSpec,
    pub converge: ConvergeSection,
    pub speedup: SpeedupSection,
    pub throughput: ThroughputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: ModeName::Asgd,
            ssp_k: 4,
            n_ranks: 2,
            max_grad_buffer: 1,
            batch_size: 32,
            alpha: 5.0,
            alpha_scaling: false,
            passes: 1,
            max_batches: None,
            executor: ExecutorKind::Deterministic,
            link_latency_ns: 1_000,
            jitter: 0.2,
            queue_capacity: 1024,
            output_dir: PathBuf::from("out"),
            learner: LearnerKind::Word2vec { vocab_size: 500, dim: 16, negatives: 5, window: 2 },
            data: DataSpec::Corpus { corpus: CorpusSpec::default() },
            converge: ConvergeSection::default(),
            speedup: SpeedupSection::default(),
            throughput: ThroughputSection::default(),
        }
    }
}

/// A `key = value` override; `key` may be dotted, `value` is a TOML literal
/// or a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), HarnessError> {
    let (k, v) = s.split_once('=').ok_or_else(|| HarnessError::Config(format!("expected key=value, got {s:?}")))?;
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                // A new tagged variant replaces the old one wholesale.
                let replace = matches!(&v, toml::Value::Table(t) if t.contains_key("kind"));
                match b.get_mut(&k) {
                    Some(slot) if !replace => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), HarnessError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| HarnessError::Config(format!("{key}: not a table")))?;
        cur = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur.as_table_mut().ok_or_else(|| HarnessError::Config(format!("{key}: not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Layers, lowest precedence first: built-in defaults, the file, the
    /// seed environment variable, then `overrides` in order.
    pub fn load(
        file: Option<&Path>,
        env_seed: Option<&str>,
        overrides: &[(String, toml::Value)],
    ) -> Result<Self, HarnessError> {
        let mut v = toml::Value::try_from(RunConfig::default()).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut v, toml::Value::Table(table));
        }
        if let Some(s) = env_seed {
            let seed: u64 = s.trim().parse().map_err(|_| HarnessError::Config(format!("{SEED_ENV}={s:?} is not a u64")))?;
            set_path(&mut v, "seed", toml::Value::Integer(seed as i64))?;
        }
        for (k, val) in overrides {
            set_path(&mut v, k, val.clone())?;
        }
        let cfg: RunConfig = v.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_ranks == 0 {
            return bad("n_ranks must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_grad_buffer == 0 {
            return bad("max_grad_buffer must be positive".into());
        }
        if self.passes == 0 {
            return bad("passes must be positive".into());
        }
        if self.mode == ModeName::Ssp && self.ssp_k == 0 {
            return bad("ssp_k must be positive".into());
        }
        if self.mode == ModeName::Sync && self.n_ranks != 1 {
            return bad("sync mode runs a single rank".into());
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad("jitter must lie in [0, 1)".into());
        }
        self.learner_spec(1).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        match (&self.learner, &self.data) {
            (LearnerKind::Word2vec { vocab_size, .. }, DataSpec::Corpus { corpus }) => {
                if corpus.vocab_size != *vocab_size {
                    return bad(format!("corpus vocabulary {} != learner vocabulary {vocab_size}", corpus.vocab_size));
                }
                if corpus.topics == 0 || corpus.topics > corpus.vocab_size {
                    return bad("corpus topics must be between 1 and the vocabulary size".into());
                }
            }
            (LearnerKind::Word2vec { .. }, DataSpec::Text { .. }) => {}
            (LearnerKind::DenseClassifier { input_dim, classes, .. }, DataSpec::Blobs { blobs }) => {
                if blobs.dim != *input_dim || blobs.classes as usize != *classes {
                    return bad("blob dimensions do not match the classifier".into());
                }
            }
            (LearnerKind::Linear { dim }, DataSpec::Dyadic { dim: d, .. }) if d == dim => {}
            (LearnerKind::QuadraticToy { .. }, DataSpec::Dyadic { .. }) => {}
            (l, d) => return bad(format!("learner {l:?} cannot train on data {d:?}")),
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        match self.mode {
            ModeName::Sync => Mode::Sync,
            ModeName::Asgd => Mode::Asgd,
            ModeName::Ssp => Mode::Ssp(self.ssp_k),
        }
    }

    pub fn executor(&self) -> Executor {
        match self.executor {
            ExecutorKind::Threads => Executor::Threads,
            ExecutorKind::Deterministic => Executor::Deterministic {
                seed: self.seed,
                link_latency_ns: self.link_latency_ns,
                jitter: self.jitter,
                record_trace: false,
            },
        }
    }

    /// Learning rate used with `n` ranks.
    pub fn effective_alpha(&self, n: u32) -> f64 {
        if self.alpha_scaling {
            scale_learning_rate(self.alpha, n)
        } else {
            self.alpha
        }
    }

    pub fn learner_spec(&self, n: u32) -> LearnerSpec {
        LearnerSpec { kind: self.learner.clone(), alpha: self.effective_alpha(n), seed: self.seed }
    }

    pub fn build_learner(&self) -> Result<Arc<dyn Learner>, HarnessError> {
        self.learner_spec(1).build().map_err(|e| HarnessError::Config(e.to_string()))
    }

    fn skipgram(&self, counts: &[u64]) -> Result<SkipGram, HarnessError> {
        let (window, negatives) = match self.learner {
            LearnerKind::Word2vec { window, negatives, .. } => (window, negatives),
            _ => (2, 5),
        };
        let sampler = NegativeSampler::new(counts).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(SkipGram { window, negatives, sampler: Some(Arc::new(sampler)) })
    }

    fn sentences(&self) -> Result<Option<Vec<Vec<u32>>>, HarnessError> {
        match &self.data {
            DataSpec::Corpus { corpus } => Ok(Some(corpus.generate())),
            DataSpec::Text { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                let vocab = Vocabulary::build(text.lines());
                if let LearnerKind::Word2vec { vocab_size, .. } = self.learner {
                    if vocab.len() != vocab_size as usize {
                        return Err(HarnessError::Config(format!(
                            "{} has {} distinct tokens, learner expects {vocab_size}",
                            path.display(),
                            vocab.len()
                        )));
                    }
                }
                Ok(Some(text.lines().map(|l| vocab.encode(l)).filter(|s| !s.is_empty()).collect()))
            }
            _ => Ok(None),
        }
    }

    fn vocab_size(&self) -> u32 {
        match self.learner {
            LearnerKind::Word2vec { vocab_size, .. } => vocab_size,
            _ => 0,
        }
    }

    /// The training stream. Text sources stay sentence records.
    pub fn dataset(&self) -> Result<Dataset, HarnessError> {
        if let Some(sentences) = self.sentences()? {
            let skipgram = self.skipgram(&token_counts(&sentences, self.vocab_size()))?;
            return Ok(Dataset::Sentences { sentences: Arc::new(sentences), skipgram });
        }
        Ok(Dataset::Pairs(Arc::new(self.pairs()?)))
    }

    /// The training stream with one record per training pair.
    pub fn pairs(&self) -> Result<Vec<TrainingPair>, HarnessError> {
        if let Some(sentences) = self.sentences()? {
            let sg = self.skipgram(&token_counts(&sentences, self.vocab_size()))?;
            let sampler = sg.sampler.as_deref().expect("skipgram sampler");
            return make_pairs_word2vec(&sentences, sg.window, sg.negatives, sampler, self.seed)
                .map_err(|e| HarnessError::Config(e.to_string()));
        }
        Ok(match &self.data {
            DataSpec::Blobs { blobs } => gaussian_blobs(blobs),
            DataSpec::Dyadic { samples, dim, seed } => {
                let dim = match &self.learner {
                    LearnerKind::QuadraticToy { target } => target.len(),
                    _ => *dim,
                };
                dyadic_pairs(*samples, dim, *seed)
            }
            DataSpec::Corpus { .. } | DataSpec::Text { .. } => unreachable!("handled above"),
        })
    }
}
