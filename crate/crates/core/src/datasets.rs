//! Synthetic data sets and their on-disk formats.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::TrainingPair;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Topic-mixture corpus: every sentence draws its words from one topic.
///
/// Token `t` belongs to topic `t * topics / vocab_size` unless a membership
/// table overrides it. Within a topic, words follow a Zipf(1) law over their
/// position in the topic; with probability `noise` a word is drawn uniformly
/// from the whole vocabulary instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub vocab_size: u32,
    pub topics: u32,
    pub sentence_len: usize,
    pub sentences: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { vocab_size: 500, topics: 10, sentence_len: 10, sentences: 500, noise: 0.05, seed: 0 }
    }
}

impl CorpusSpec {
    pub fn default_membership(&self) -> Vec<u32> {
        (0..self.vocab_size).map(|t| (u64::from(t) * u64::from(self.topics) / u64::from(self.vocab_size)) as u32).collect()
    }

    pub fn generate(&self) -> Vec<Vec<u32>> {
        self.generate_with(&self.default_membership(), self.sentences, self.seed)
    }

    /// `count` sentences under an explicit token-to-topic table.
    pub fn generate_with(&self, membership: &[u32], count: usize, seed: u64) -> Vec<Vec<u32>> {
        assert_eq!(membership.len(), self.vocab_size as usize);
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); self.topics as usize];
        for (t, &z) in membership.iter().enumerate() {
            members[z as usize].push(t as u32);
        }
        let samplers: Vec<Option<rand::distr::weighted::WeightedIndex<f64>>> = members
            .iter()
            .map(|m| {
                let w: Vec<f64> = (0..m.len()).map(|i| 1.0 / (i + 1) as f64).collect();
                rand::distr::weighted::WeightedIndex::new(w).ok()
            })
            .collect();
        let live: Vec<usize> = (0..members.len()).filter(|&z| samplers[z].is_some()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let z = live[rng.random_range(0..live.len())];
                let dist = samplers[z].as_ref().expect("live topic");
                (0..self.sentence_len)
                    .map(|_| {
                        if rng.random_bool(self.noise) {
                            rng.random_range(0..self.vocab_size)
                        } else {
                            members[z][dist.sample(&mut rng)]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Occurrences of each token id below `vocab_size`.
pub fn token_counts(sentences: &[Vec<u32>], vocab_size: u32) -> Vec<u64> {
    let mut c = vec![0u64; vocab_size as usize];
    for s in sentences {
        for &t in s {
            c[t as usize] += 1;
        }
    }
    c
}

/// Isotropic Gaussian clusters, one per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub classes: u32,
    pub dim: usize,
    pub samples: usize,
    /// Standard deviation of the class centers around the origin.
    pub separation: f64,
    /// Standard deviation of samples around their center.
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self { classes: 4, dim: 8, samples: 4096, separation: 1.5, spread: 1.0, seed: 0 }
    }
}

/// Shuffled labeled samples.
pub fn gaussian_blobs(spec: &BlobSpec) -> Vec<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers_dist = Normal::new(0.0, spec.separation).expect("valid sd");
    let noise = Normal::new(0.0, spec.spread).expect("valid sd");
    let centers: Vec<Vec<f64>> =
        (0..spec.classes).map(|_| (0..spec.dim).map(|_| centers_dist.sample(&mut rng)).collect()).collect();
    let mut out: Vec<TrainingPair> = (0..spec.samples)
        .map(|i| {
            let label = (i % spec.classes as usize) as u32;
            let features = centers[label as usize].iter().map(|c| (c + noise.sample(&mut rng)) as f32).collect();
            TrainingPair::Labeled { features, label }
        })
        .collect();
    out.shuffle(&mut rng);
    out
}

/// Pairs whose features are multiples of 1/16 in [-1/2, 1/2].
///
/// Sums and power-of-two means of such values are exact in `f32`, so linear
/// learners trained on them accumulate parameters without rounding.
pub fn dyadic_pairs(samples: usize, dim: usize, seed: u64) -> Vec<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| TrainingPair::Labeled {
            features: (0..dim).map(|_| rng.random_range(-8i32..=8) as f32 / 16.0).collect(),
            label: 0,
        })
        .collect()
}

/// CSV `label,f1,...,fd`.
pub fn write_labeled_csv(mut w: impl Write, pairs: &[TrainingPair]) -> std::io::Result<()> {
    for p in pairs {
        if let TrainingPair::Labeled { features, label } = p {
            write!(w, "{label}")?;
            for f in features {
                write!(w, ",{f}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn read_labeled_csv(r: impl BufRead) -> Result<Vec<TrainingPair>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| DatasetError::Parse { line: i + 1, msg: msg.to_string() };
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or("").trim().parse().map_err(|_| bad("bad label"))?;
        let features = fields
            .map(|f| f.trim().parse::<f32>().map_err(|_| bad("bad feature")))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(TrainingPair::Labeled { features, label });
    }
    Ok(out)
}

/// Sentences as space-separated token ids, one per line.
pub fn write_sentences(mut w: impl Write, sentences: &[Vec<u32>]) -> std::io::Result<()> {
    for s in sentences {
        let line: Vec<String> = s.iter().map(|t| format!("w{t}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_seeded_and_topical() {
        let spec = CorpusSpec { noise: 0.0, ..Default::default() };
        let a = spec.generate();
        assert_eq!(a, spec.generate());
        assert_eq!(a.len(), 500);
        let m = spec.default_membership();
        for s in &a {
            assert!(s.iter().all(|&t| m[t as usize] == m[s[0] as usize]));
        }
        let counts = token_counts(&a, 500);
        assert_eq!(counts.iter().sum::<u64>(), 5000);
    }

    #[test]
    fn blobs_and_csv_round_trip() {
        let spec = BlobSpec { samples: 40, dim: 3, ..Default::default() };
        let p = gaussian_blobs(&spec);
        assert_eq!(p.len(), 40);
        let mut buf = Vec::new();
        write_labeled_csv(&mut buf, &p).unwrap();
        assert_eq!(read_labeled_csv(&buf[..]).unwrap(), p);
        assert!(read_labeled_csv(&b"x,1.0\n"[..]).is_err());
    }

    #[test]
    fn dyadic_features() {
        for p in dyadic_pairs(100, 4, 1) {
            let TrainingPair::Labeled { features, .. } = p else { panic!() };
            assert!(features.iter().all(|f| (f * 16.0).fract() == 0.0 && f.abs() <= 0.5));
        }
    }
}
