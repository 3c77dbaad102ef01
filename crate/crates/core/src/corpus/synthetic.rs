use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::ParallelText;
use crate::error::{Error, Result};

/// Parameters of the reverse-and-substitute toy translation task.
///
/// Source words are drawn from a Zipf law over `src_vocab` types. The
/// target is the reversed source with each word replaced through a fixed
/// dictionary; a word has `variants` translations and the one used depends
/// on the source word preceding it. The target vocabulary therefore holds
/// `src_vocab * variants` types.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub src_vocab: usize,
    pub variants: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Width of optional per-sentence feature vectors; 0 disables them.
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            src_vocab: 100,
            variants: 2,
            min_len: 3,
            max_len: 10,
            zipf: 1.0,
            train: 5000,
            dev: 200,
            test: 200,
            feature_dim: 0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub train: ParallelText,
    pub dev: ParallelText,
    pub test: ParallelText,
    /// Feature rows parallel to train, dev and test; empty when disabled.
    pub features: [Vec<Vec<f64>>; 3],
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synthetic spec: {m}")));
        if self.src_vocab == 0 || self.variants == 0 {
            return bad("vocabulary sizes must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if !self.zipf.is_finite() || self.zipf < 0.0 {
            return bad("zipf exponent must be finite and non-negative");
        }
        if self.train == 0 {
            return bad("train size must be positive");
        }
        Ok(())
    }

    pub fn source_word(r: usize) -> String {
        format!("s{r}")
    }

    /// Expected unigram probability of the source word with rank `r`.
    pub fn zipf_probability(&self, r: usize) -> f64 {
        let z: f64 = (0..self.src_vocab).map(|k| ((k + 1) as f64).powf(-self.zipf)).sum();
        ((r + 1) as f64).powf(-self.zipf) / z
    }
}

pub fn make_synthetic_task(spec: &SyntheticSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights: Vec<f64> = (0..spec.src_vocab).map(|k| ((k + 1) as f64).powf(-spec.zipf)).collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut dictionary: Vec<usize> = (0..spec.src_vocab * spec.variants).collect();
    dictionary.shuffle(&mut rng);
    let embed: Vec<Vec<f64>> = (0..spec.src_vocab)
        .map(|_| (0..spec.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let total = spec.train + spec.dev + spec.test;
    let mut seen = HashSet::new();
    let mut sentences = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while sentences.len() < total {
        attempts += 1;
        if attempts > 100 * total + 1000 {
            return Err(Error::Invalid("synthetic spec admits too few distinct sentences".into()));
        }
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let words: Vec<usize> = (0..len).map(|_| zipf.sample(&mut rng)).collect();
        if seen.insert(words.clone()) {
            sentences.push(words);
        }
    }

    let mut splits: [ParallelText; 3] = Default::default();
    let mut features: [Vec<Vec<f64>>; 3] = Default::default();
    for (i, words) in sentences.iter().enumerate() {
        let split = if i < spec.train {
            0
        } else if i < spec.train + spec.dev {
            1
        } else {
            2
        };
        let source: Vec<String> = words.iter().map(|&w| SyntheticSpec::source_word(w)).collect();
        let target: Vec<String> = (0..words.len())
            .rev()
            .map(|p| {
                let variant = if p == 0 { 0 } else { words[p - 1] % spec.variants };
                format!("t{}", dictionary[words[p] * spec.variants + variant])
            })
            .collect();
        splits[split].source.push(source.join(" "));
        splits[split].target.push(target.join(" "));
        if spec.feature_dim > 0 {
            let mut f = vec![0.0; spec.feature_dim];
            for &w in words {
                for (a, b) in f.iter_mut().zip(&embed[w]) {
                    *a += b / words.len() as f64;
                }
            }
            features[split].push(f);
        }
    }
    let [train, dev, test] = splits;
    Ok(SyntheticTask { train, dev, test, features })
}
