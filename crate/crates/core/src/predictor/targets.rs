use crate::corpus::{Example, NUM_SPECIALS};
use crate::error::{Error, Result};

/// Distinct non-special ids of a target sentence, ascending.
pub fn target_words(target: &[usize]) -> Vec<usize> {
    let mut w: Vec<usize> = target.iter().copied().filter(|&i| i >= NUM_SPECIALS).collect();
    w.sort_unstable();
    w.dedup();
    w
}

/// Fraction of examples whose target contains each word.
pub fn unigram_prior(examples: &[Example], vocab_size: usize) -> Vec<f64> {
    let mut p = vec![0.0; vocab_size];
    for ex in examples {
        for w in target_words(&ex.target) {
            p[w] += 1.0;
        }
    }
    if !examples.is_empty() {
        let n = examples.len() as f64;
        p.iter_mut().for_each(|x| *x /= n);
    }
    p
}

/// Multi-label targets `t = (1 - eps) raw + eps prior` where `raw` is the
/// indicator of the gold words.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTargets {
    pub t: Vec<f64>,
}

pub fn smooth_targets(gold: &[usize], eps: f64, prior: &[f64]) -> Result<SmoothedTargets> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Invalid(format!("smoothing coefficient {eps} outside [0, 1)")));
    }
    let mut t: Vec<f64> = prior.iter().map(|p| eps * p).collect();
    for &g in gold {
        let slot = t
            .get_mut(g)
            .ok_or_else(|| Error::Invalid(format!("gold id {g} beyond prior of length {}", prior.len())))?;
        *slot = (1.0 - eps) + eps * prior[g];
    }
    Ok(SmoothedTargets { t })
}
