use std::collections::HashMap;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Highest n-gram order used by GLEU and BLEU.
pub const MAX_ORDER: usize = 4;

/// N-gram multiset of one sentence for orders 1..=`MAX_ORDER`.
#[derive(Debug, Clone)]
pub struct NGramCounts<'a, T> {
    orders: Vec<HashMap<&'a [T], usize>>,
    totals: [usize; MAX_ORDER],
}

impl<'a, T: Eq + Hash> NGramCounts<'a, T> {
    pub fn new(tokens: &'a [T]) -> Self {
        let mut orders = Vec::with_capacity(MAX_ORDER);
        let mut totals = [0; MAX_ORDER];
        for n in 1..=MAX_ORDER {
            let mut map = HashMap::new();
            if tokens.len() >= n {
                for w in tokens.windows(n) {
                    *map.entry(w).or_insert(0) += 1;
                }
                totals[n - 1] = tokens.len() - n + 1;
            }
            orders.push(map);
        }
        NGramCounts { orders, totals }
    }

    /// Number of n-grams of order `n`.
    pub fn total(&self, n: usize) -> usize {
        self.totals[n - 1]
    }

    pub fn count(&self, gram: &[T]) -> usize {
        match gram.len() {
            0 => 0,
            n if n <= MAX_ORDER => self.orders[n - 1].get(gram).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// Matches of order `n` with counts clipped by `reference`.
    pub fn clipped_matches(&self, reference: &NGramCounts<'_, T>, n: usize) -> usize {
        self.orders[n - 1]
            .iter()
            .map(|(g, c)| (*c).min(reference.count(g)))
            .sum()
    }
}

/// Sentence-level GLEU: pooled clipped n-gram matches over orders 1..4,
/// scored as min(precision, recall).
pub fn gleu<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> f64 {
    let h = NGramCounts::new(hyp);
    let r = NGramCounts::new(reference);
    let mut matches = 0;
    let mut hyp_total = 0;
    let mut ref_total = 0;
    for n in 1..=MAX_ORDER {
        matches += h.clipped_matches(&r, n);
        hyp_total += h.total(n);
        ref_total += r.total(n);
    }
    if matches == 0 {
        return 0.0;
    }
    let precision = matches as f64 / hyp_total as f64;
    let recall = matches as f64 / ref_total as f64;
    precision.min(recall)
}

/// Sufficient statistics for corpus BLEU; additive over sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn sentence<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let h = NGramCounts::new(hyp);
        let r = NGramCounts::new(reference);
        let mut s = BleuStats { hyp_len: hyp.len(), ref_len: reference.len(), ..Default::default() };
        for n in 1..=MAX_ORDER {
            s.matches[n - 1] = h.clipped_matches(&r, n);
            s.totals[n - 1] = h.total(n);
        }
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU-4 on the 0..100 scale, without smoothing.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            if self.matches[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        let c = self.hyp_len as f64;
        let r = self.ref_len as f64;
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

/// Corpus BLEU-4 with brevity penalty, reported on the 0..100 scale.
pub fn corpus_bleu<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Invalid(format!(
            "corpus_bleu: {} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::sentence(h.as_ref(), r.as_ref()));
    }
    Ok(total.score())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapReport {
    pub bleu: f64,
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Bootstrap resampling of sentence pairs; returns the 95% interval of
/// corpus BLEU over `samples` resamples.
pub fn bootstrap_bleu<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(
    hyps: &[H],
    refs: &[R],
    samples: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    let bleu = corpus_bleu(hyps, refs)?;
    if hyps.is_empty() || samples == 0 {
        return Err(Error::Empty("bootstrap sample"));
    }
    let stats: Vec<_> = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::sentence(h.as_ref(), r.as_ref()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut acc = BleuStats::default();
        for _ in 0..stats.len() {
            acc.add(&stats[rng.gen_range(0..stats.len())]);
        }
        scores.push(acc.score());
    }
    scores.sort_by(f64::total_cmp);
    let mean = scores.iter().sum::<f64>() / samples as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples as f64;
    let at = |q: f64| scores[((q * (samples - 1) as f64).round() as usize).min(samples - 1)];
    Ok(BootstrapReport { bleu, mean, std: var.sqrt(), lower: at(0.025), upper: at(0.975) })
}
