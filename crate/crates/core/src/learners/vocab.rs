use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LearnerError, ParamStore, TrainingPair};

/// Token table. Ids are ranks: descending count, ties broken lexicographically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// One pass over whitespace-separated text.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for line in lines {
            for tok in line.split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i as u32)).collect();
        let (tokens, counts) = entries.into_iter().unzip();
        Self { tokens, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Token ids of a line; unknown tokens are skipped.
    pub fn encode(&self, line: &str) -> Vec<u32> {
        line.split_whitespace().filter_map(|t| self.id(t)).collect()
    }

    /// `token<TAB>count` per line in id order.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, LearnerError> {
        let mut entries = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (t, c) = line
                .split_once('\t')
                .ok_or_else(|| LearnerError::Io(format!("vocabulary line {}: missing tab", n + 1)))?;
            let c = c
                .trim()
                .parse()
                .map_err(|_| LearnerError::Io(format!("vocabulary line {}: bad count", n + 1)))?;
            entries.push((t.to_string(), c));
        }
        Ok(Self::from_entries(entries))
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnerError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LearnerError> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }
}

/// Draws negative samples with probability proportional to `count^0.75`.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    dist: WeightedIndex<f64>,
    weights: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Result<Self, LearnerError> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let dist = WeightedIndex::new(&weights).map_err(|_| LearnerError::EmptyVocabulary)?;
        Ok(Self { dist, weights })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.dist.sample(rng) as u32
    }

    /// Normalized sampling probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }
}

/// Skip-gram pairs of one sentence appended to `out`.
///
/// For each center token every context within `window` positions yields a
/// positive pair followed by `negatives` sampled negative pairs. A negative
/// equal to the observed context is redrawn (a bounded number of times).
pub fn pairs_for_sentence<R: Rng + ?Sized>(
    sentence: &[u32],
    window: usize,
    negatives: usize,
    sampler: Option<&NegativeSampler>,
    rng: &mut R,
    out: &mut Vec<TrainingPair>,
) -> Result<(), LearnerError> {
    if negatives > 0 && sampler.is_none() {
        return Err(LearnerError::EmptyVocabulary);
    }
    for (i, &center) in sentence.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(sentence.len().saturating_sub(1));
        for (j, &context) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
            if j == i {
                continue;
            }
            out.push(TrainingPair::Skipgram { center, context, label: 1 });
            if let Some(s) = sampler {
                for _ in 0..negatives {
                    let mut neg = s.sample(rng);
                    for _ in 0..8 {
                        if neg != context {
                            break;
                        }
                        neg = s.sample(rng);
                    }
                    out.push(TrainingPair::Skipgram { center, context: neg, label: 0 });
                }
            }
        }
    }
    Ok(())
}

/// Skip-gram pairs for a whole token stream split into sentences.
pub fn make_pairs_word2vec(
    sentences: &[Vec<u32>],
    window: usize,
    negatives: usize,
    sampler: &NegativeSampler,
    seed: u64,
) -> Result<Vec<TrainingPair>, LearnerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in sentences {
        pairs_for_sentence(s, window, negatives, Some(sampler), &mut rng, &mut out)?;
    }
    Ok(out)
}

/// Input-embedding table read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSnapshot {
    pub vocab_size: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl EmbeddingSnapshot {
    pub fn row(&self, id: usize) -> &[f32] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    pub fn from_params(params: &ParamStore<f32>) -> Result<Self, LearnerError> {
        let seg = params
            .segment("input_embeddings")
            .ok_or_else(|| LearnerError::InvalidSpec("no input_embeddings tensor".into()))?;
        Ok(Self {
            vocab_size: seg.shape[0],
            dim: seg.shape[1],
            values: params.tensor("input_embeddings").unwrap().to_vec(),
        })
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

/// Writes `V (u64) | d (u64) | V*d f32`, little-endian, plus a `.vocab` sidecar.
pub fn write_embeddings(path: &Path, snapshot: &EmbeddingSnapshot, vocab: &Vocabulary) -> Result<(), LearnerError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&(snapshot.vocab_size as u64).to_le_bytes())?;
    w.write_all(&(snapshot.dim as u64).to_le_bytes())?;
    for v in &snapshot.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    vocab.save(&sidecar(path))
}

pub fn read_embeddings(path: &Path) -> Result<(EmbeddingSnapshot, Vocabulary), LearnerError> {
    let bytes = fs::read(path)?;
    let bad = || LearnerError::Io(format!("{}: truncated embedding snapshot", path.display()));
    if bytes.len() < 16 {
        return Err(bad());
    }
    let v = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != v * d * 4 {
        return Err(bad());
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let vocab = Vocabulary::load(&sidecar(path))?;
    Ok((EmbeddingSnapshot { vocab_size: v, dim: d, values }, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_ranks_by_count_then_token() {
        let v = Vocabulary::build(["b a c a", "c b a d"]);
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.id("c"), Some(2));
        assert_eq!(v.id("d"), Some(3));
        assert_eq!(v.counts(), &[3, 2, 2, 1]);
        assert_eq!(v.encode("d zzz a"), vec![3, 0]);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "a\t3\nb\t2\nc\t2\nd\t1\n");
        assert_eq!(Vocabulary::read_from(&buf[..]).unwrap(), v);
    }

    #[test]
    fn pair_enumeration_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        pairs_for_sentence(&[0, 1, 2], 1, 0, None, &mut rng, &mut out).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0], TrainingPair::Skipgram { center: 0, context: 1, label: 1 });
        let s = NegativeSampler::new(&[5, 4, 3]).unwrap();
        let pairs = make_pairs_word2vec(&[vec![0, 1, 2]], 1, 2, &s, 1).unwrap();
        assert_eq!(pairs.len(), 4 * 3);
        assert_eq!(pairs.iter().filter(|p| matches!(p, TrainingPair::Skipgram { label: 0, .. })).count(), 8);
    }

    #[test]
    fn empty_vocabulary_is_rejected() {
        assert!(matches!(NegativeSampler::new(&[]), Err(LearnerError::EmptyVocabulary)));
        assert!(matches!(NegativeSampler::new(&[0, 0]), Err(LearnerError::EmptyVocabulary)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = pairs_for_sentence(&[0, 1], 1, 3, None, &mut rng, &mut Vec::new());
        assert!(matches!(r, Err(LearnerError::EmptyVocabulary)));
    }

    #[test]
    fn negative_frequencies_follow_unigram_power() {
        // Zipf-like counts; expected probabilities computed independently here.
        let counts: Vec<u64> = (1..=50u64).map(|r| 10_000 / r).collect();
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = weights.iter().sum();
        let s = NegativeSampler::new(&counts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hits = vec![0u64; counts.len()];
        let draws = 1_000_000;
        for _ in 0..draws {
            hits[s.sample(&mut rng) as usize] += 1;
        }
        // Group tokens into deciles of the id range and compare mass per decile.
        for dec in 0..10 {
            let ids = dec * 5..(dec + 1) * 5;
            let expected: f64 = ids.clone().map(|i| weights[i] / total).sum();
            let observed = ids.map(|i| hits[i]).sum::<u64>() as f64 / draws as f64;
            assert!((observed - expected).abs() / expected < 0.02, "decile {dec}: {observed} vs {expected}");
        }
    }

    #[test]
    fn embedding_snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let vocab = Vocabulary::build(["x y y"]);
        let snap = EmbeddingSnapshot { vocab_size: 2, dim: 3, values: vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25] };
        write_embeddings(&path, &snap, &vocab).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[0..8], &2u64.to_le_bytes());
        let (back, v2) = read_embeddings(&path).unwrap();
        assert_eq!(back, snap);
        assert_eq!(v2, vocab);
        assert!(dir.path().join("emb.bin.vocab").exists());
    }
}
