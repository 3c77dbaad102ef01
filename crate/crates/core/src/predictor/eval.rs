use super::mask::{build_mask, top_k, MaskCache, MaskMode, VocabMask};
use super::model::VocabPredictor;
use crate::corpus::{Example, NUM_SPECIALS};
use crate::error::Result;
use crate::scalar::Scalar;

/// Gold word occurrences of a target (specials excluded) and how many of
/// them the mask covers.
pub fn covered(target: &[usize], mask: &VocabMask) -> (usize, usize) {
    let words = target.iter().filter(|&&w| w >= NUM_SPECIALS);
    let (mut total, mut hit) = (0, 0);
    for &w in words {
        total += 1;
        hit += usize::from(mask.contains(w));
    }
    (hit, total)
}

/// Share of gold word occurrences in `examples` covered by each example's
/// top-`k` predictions.
pub fn recall_at_k<T: Scalar>(model: &VocabPredictor<T>, examples: &[Example], k: usize) -> Result<f64> {
    Ok(recall_curve(model, examples, &[k])?[0])
}

/// Recall for several `k`, scoring each example once.
pub fn recall_curve<T: Scalar>(model: &VocabPredictor<T>, examples: &[Example], ks: &[usize]) -> Result<Vec<f64>> {
    let mut hits = vec![0usize; ks.len()];
    let mut total = 0;
    for ex in examples {
        let scores = model.predict_logits(&ex.source)?;
        for (i, &k) in ks.iter().enumerate() {
            let (h, t) = covered(&ex.target, &top_k(&scores, k.min(scores.len()))?);
            hits[i] += h;
            if i == 0 {
                total += t;
            }
        }
    }
    Ok(hits.iter().map(|&h| if total == 0 { 1.0 } else { h as f64 / total as f64 }).collect())
}

/// Builds a mask of size `k` for every example.
pub fn build_masks<T: Scalar>(model: &VocabPredictor<T>, examples: &[Example], k: usize, mode: MaskMode) -> Result<MaskCache> {
    let mut cache = MaskCache::default();
    for ex in examples {
        let scores = model.predict_logits(&ex.source)?;
        let gold = (mode == MaskMode::Train).then_some(ex.target.as_slice());
        cache.insert(ex.id, build_mask(&scores, k, gold, mode)?);
    }
    Ok(cache)
}
