use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MiniBatch, Passes, Rate, Replay, StreamError, Tumbler};
use crate::dataflow::{Context, Control, EngineError, InstanceInfo, Message, Operator, OperatorOutput, Payload, Record};
use crate::learners::{pairs_for_sentence, Learner, NegativeSampler, TrainingPair};
use crate::stream::Event;

/// Skip-gram expansion of token sequences into training pairs.
#[derive(Clone, Debug)]
pub struct SkipGram {
    pub window: usize,
    pub negatives: usize,
    pub sampler: Option<Arc<NegativeSampler>>,
}

/// Training data fed to a generator.
#[derive(Clone, Debug)]
pub enum Dataset {
    /// One record is one pair.
    Pairs(Arc<Vec<TrainingPair>>),
    /// One record is a sentence, expanded into skip-gram pairs on ingestion.
    Sentences { sentences: Arc<Vec<Vec<u32>>>, skipgram: SkipGram },
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Pairs(p) => p.len(),
            Dataset::Sentences { sentences, .. } => sentences.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn expand(&self, idx: usize, rng: &mut ChaCha8Rng, out: &mut Vec<TrainingPair>) -> Result<(), EngineError> {
        match self {
            Dataset::Pairs(p) => out.push(p[idx].clone()),
            Dataset::Sentences { sentences, skipgram } => expand_tokens(&sentences[idx], skipgram, rng, out)?,
        }
        Ok(())
    }
}

fn stream_err(e: StreamError) -> EngineError {
    EngineError::Operator(e.to_string())
}

fn expand_tokens(
    tokens: &[u32],
    sg: &SkipGram,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<TrainingPair>,
) -> Result<(), EngineError> {
    pairs_for_sentence(tokens, sg.window, sg.negatives, sg.sampler.as_deref(), rng, out)?;
    Ok(())
}

/// Groups pairs into mini-batches of a fixed size and stamps them.
#[derive(Debug)]
pub struct Batcher {
    tumbler: Tumbler<TrainingPair>,
    learner: Arc<dyn Learner>,
    next_id: u64,
    id_stride: u64,
    produced: u64,
}

impl Batcher {
    /// Batch ids start at `first_id` and advance by `id_stride`.
    pub fn new(size: usize, learner: Arc<dyn Learner>, first_id: u64, id_stride: u64) -> Result<Self, StreamError> {
        Ok(Self { tumbler: Tumbler::new(size)?, learner, next_id: first_id, id_stride, produced: 0 })
    }

    pub fn push(&mut self, pair: TrainingPair, ts: u64) -> Option<MiniBatch> {
        let window = self.tumbler.push(Event::new(pair, ts))?;
        let created_ts = window.last().map_or(0, |e| e.ts);
        let pairs: Vec<TrainingPair> = window.into_iter().map(|e| e.payload).collect();
        let id = self.next_id;
        self.next_id += self.id_stride;
        self.produced += 1;
        let shard_key = self.learner.shard_key(&pairs, id);
        Some(MiniBatch { id, pairs, created_ts, shard_key })
    }

    pub fn produced(&self) -> u64 {
        self.produced
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub batch_size: usize,
    pub passes: Passes,
    pub rate: Rate,
    /// Stop after this many batches even if the dataset is not exhausted.
    pub max_batches: Option<u64>,
    pub seed: u64,
    /// Simulated ingestion cost per record.
    pub ingest_cost_ns: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { batch_size: 32, passes: Passes::Finite(1), rate: Rate::Max, max_batches: None, seed: 0, ingest_cost_ns: 50 }
    }
}

/// Source operator: replays a dataset as a stream, tumbles it into
/// mini-batches and emits them along its out-edges.
///
/// With several instances, instance `r` takes every `r`-th record of the
/// replayed stream. Paced events are stamped with their scheduled ingestion
/// time, so a generator held back by a full queue observes growing latency.
pub struct MiniBatchGenerator {
    dataset: Dataset,
    cursor: Replay<u32>,
    batcher: Batcher,
    config: GeneratorConfig,
    rng: ChaCha8Rng,
    start: Option<u64>,
    scratch: Vec<TrainingPair>,
    done: bool,
}

impl MiniBatchGenerator {
    pub fn new(
        info: &InstanceInfo,
        dataset: Dataset,
        learner: Arc<dyn Learner>,
        config: GeneratorConfig,
    ) -> Result<Self, StreamError> {
        let idx: Vec<u32> = (0..dataset.len() as u32).collect();
        let n = u64::from(info.instances);
        let r = u64::from(info.rank().0);
        let cursor = Replay::new(Arc::new(idx), config.passes, config.rate)?.partition(r, n);
        let batcher = Batcher::new(config.batch_size, learner, r + 1, n)?;
        Ok(Self {
            dataset,
            cursor,
            batcher,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ (r << 32)),
            config,
            start: None,
            scratch: Vec::new(),
            done: false,
        })
    }

    /// The batch sequence a single unpaced generator instance emits for this
    /// dataset and configuration, produced without running an engine.
    pub fn offline_batches(
        dataset: &Dataset,
        learner: Arc<dyn Learner>,
        config: &GeneratorConfig,
    ) -> Result<Vec<MiniBatch>, EngineError> {
        let idx: Vec<u32> = (0..dataset.len() as u32).collect();
        let mut cursor = Replay::new(Arc::new(idx), config.passes, Rate::Max).map_err(stream_err)?;
        if matches!(config.passes, Passes::Unbounded) && config.max_batches.is_none() {
            return Err(EngineError::Operator("unbounded replay needs a batch limit".into()));
        }
        let mut batcher = Batcher::new(config.batch_size, learner, 1, 1).map_err(stream_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut scratch = Vec::new();
        let mut out = Vec::new();
        let full = |b: &Batcher| config.max_batches.is_some_and(|m| b.produced() >= m);
        while !full(&batcher) {
            let Some(&i) = cursor.next_record() else { break };
            scratch.clear();
            dataset.expand(i as usize, &mut rng, &mut scratch)?;
            for pair in scratch.drain(..) {
                if full(&batcher) {
                    break;
                }
                if let Some(b) = batcher.push(pair, 0) {
                    out.push(b);
                }
            }
        }
        Ok(out)
    }

    fn limit_reached(&self) -> bool {
        self.config.max_batches.is_some_and(|m| self.batcher.produced() >= m)
    }
}

impl Operator for MiniBatchGenerator {
    fn on_message(&mut self, msg: Message, _ctx: &mut Context<'_>) -> Result<(), EngineError> {
        if let Payload::Control(Control::Stop) = msg.payload {
            self.done = true;
        }
        Ok(())
    }

    fn has_work(&self) -> bool {
        !self.done
    }

    fn step(&mut self, ctx: &mut Context<'_>) -> Result<(), EngineError> {
        let start = *self.start.get_or_insert_with(|| ctx.now_ns());
        loop {
            if self.limit_reached() || self.cursor.is_exhausted() {
                ctx.emit_end_of_stream();
                self.done = true;
                return Ok(());
            }
            let due = self.cursor.next_due_ns().map(|d| start + d);
            if let Some(t) = due {
                ctx.wait_until(t);
            }
            let idx = *self.cursor.next_record().expect("not exhausted") as usize;
            ctx.charge(self.config.ingest_cost_ns);
            let ts = due.unwrap_or_else(|| ctx.now_ns());
            self.scratch.clear();
            self.dataset.expand(idx, &mut self.rng, &mut self.scratch)?;
            let mut emitted = false;
            for pair in self.scratch.drain(..) {
                if self.config.max_batches.is_some_and(|m| self.batcher.produced() >= m) {
                    break;
                }
                if let Some(b) = self.batcher.push(pair, ts) {
                    ctx.emit(Payload::MiniBatch(Arc::new(b)));
                    emitted = true;
                }
            }
            if emitted {
                return Ok(());
            }
        }
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn finish(self: Box<Self>) -> OperatorOutput {
        OperatorOutput::Source { batches: self.batcher.produced(), events: self.cursor.emitted() }
    }
}

/// Operator that turns incoming pair or token records into mini-batches.
pub struct BatchingOperator {
    batcher: Batcher,
    skipgram: Option<SkipGram>,
    rng: ChaCha8Rng,
    upstream: u32,
    eos: u32,
    done: bool,
    scratch: Vec<TrainingPair>,
}

impl BatchingOperator {
    pub fn new(
        info: &InstanceInfo,
        batch_size: usize,
        learner: Arc<dyn Learner>,
        skipgram: Option<SkipGram>,
        seed: u64,
    ) -> Result<Self, StreamError> {
        let r = u64::from(info.rank().0);
        Ok(Self {
            batcher: Batcher::new(batch_size, learner, r + 1, u64::from(info.instances))?,
            skipgram,
            rng: ChaCha8Rng::seed_from_u64(seed ^ (r << 32)),
            upstream: info.upstream,
            eos: 0,
            done: false,
            scratch: Vec::new(),
        })
    }
}

impl Operator for BatchingOperator {
    fn on_message(&mut self, msg: Message, ctx: &mut Context<'_>) -> Result<(), EngineError> {
        match msg.payload {
            Payload::Event(e) => {
                self.scratch.clear();
                match (&e.payload, &self.skipgram) {
                    (Record::Pair(p), _) => self.scratch.push(p.clone()),
                    (Record::Tokens(t), Some(sg)) => expand_tokens(t, sg, &mut self.rng, &mut self.scratch)?,
                    _ => return Err(EngineError::Operator("batching operator cannot use this record".into())),
                }
                ctx.charge(20 * self.scratch.len() as u64);
                for pair in self.scratch.drain(..) {
                    if let Some(b) = self.batcher.push(pair, e.ts) {
                        ctx.emit(Payload::MiniBatch(Arc::new(b)));
                    }
                }
            }
            Payload::Control(Control::EndOfStream) => {
                self.eos += 1;
                if self.eos >= self.upstream {
                    ctx.emit_end_of_stream();
                    self.done = true;
                }
            }
            Payload::Control(Control::Stop) => self.done = true,
            other => return Err(EngineError::Operator(format!("unexpected {:?} message", other.kind()))),
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn finish(self: Box<Self>) -> OperatorOutput {
        OperatorOutput::Source { batches: self.batcher.produced(), events: 0 }
    }
}
