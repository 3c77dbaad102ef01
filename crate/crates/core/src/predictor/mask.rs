use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::NUM_SPECIALS;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A per-input output vocabulary: distinct global ids in ascending order.
/// Local index `i` of a reduced softmax stands for global id `ids()[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VocabMask {
    ids: Vec<usize>,
}

/// How a mask treats the gold target words of its example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Every gold word and special is included; the rest are top predictions.
    Train,
    /// Specials plus the top predictions.
    Eval,
}

impl VocabMask {
    /// Mask over arbitrary ids; they are sorted and must be distinct and
    /// below `vocab_size`.
    pub fn new(mut ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        ids.sort_unstable();
        if ids.is_empty() {
            return Err(Error::Empty("vocabulary mask"));
        }
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("duplicate id in vocabulary mask".into()));
        }
        if let Some(&last) = ids.last().filter(|&&l| l >= vocab_size) {
            return Err(Error::Invalid(format!("mask id {last} out of range for vocabulary of {vocab_size}")));
        }
        Ok(VocabMask { ids })
    }

    /// The identity mask over `0..vocab_size`.
    pub fn full(vocab_size: usize) -> Self {
        VocabMask { ids: (0..vocab_size).collect() }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Local index of a global id.
    pub fn local(&self, global: usize) -> Option<usize> {
        self.ids.binary_search(&global).ok()
    }

    pub fn contains(&self, global: usize) -> bool {
        self.local(global).is_some()
    }

    pub fn global(&self, local: usize) -> usize {
        self.ids[local]
    }
}

fn by_score<T: Scalar>(scores: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// The `k` best candidates by descending score, ties to the lower id.
fn select<T: Scalar>(scores: &[T], mut candidates: Vec<usize>, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let cmp = by_score(scores);
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, &cmp);
        candidates.truncate(k);
    }
    candidates
}

/// The `k` highest-scoring ids; ties broken by lower id.
pub fn top_k<T: Scalar>(scores: &[T], k: usize) -> Result<VocabMask> {
    if k == 0 || k > scores.len() {
        return Err(Error::Invalid(format!("top-k with k = {k} over {} scores", scores.len())));
    }
    let ids = select(scores, (0..scores.len()).collect(), k);
    VocabMask::new(ids, scores.len())
}

/// Builds a mask of exactly `k` ids. Specials are always present; in
/// training mode so is every id of `gold`. Remaining places go to the
/// highest-scoring other ids.
pub fn build_mask<T: Scalar>(scores: &[T], k: usize, gold: Option<&[usize]>, mode: MaskMode) -> Result<VocabMask> {
    let v = scores.len();
    if k > v {
        return Err(Error::Invalid(format!("mask size {k} exceeds vocabulary of {v}")));
    }
    let mut forced = vec![false; v];
    let mut n_forced = 0;
    let mut force = |id: usize, forced: &mut Vec<bool>| -> Result<()> {
        if id >= v {
            return Err(Error::Invalid(format!("gold id {id} out of range for vocabulary of {v}")));
        }
        if !forced[id] {
            forced[id] = true;
            n_forced += 1;
        }
        Ok(())
    };
    for id in 0..NUM_SPECIALS.min(v) {
        force(id, &mut forced)?;
    }
    if mode == MaskMode::Train {
        let gold = gold.ok_or_else(|| Error::Invalid("training-mode mask needs gold ids".into()))?;
        for &id in gold {
            force(id, &mut forced)?;
        }
    }
    if n_forced > k {
        return Err(Error::Invalid(format!("{n_forced} forced ids do not fit in a mask of {k}")));
    }
    let rest: Vec<usize> = (0..v).filter(|&i| !forced[i]).collect();
    let mut ids = select(scores, rest, k - n_forced);
    ids.extend((0..v).filter(|&i| forced[i]));
    VocabMask::new(ids, v)
}

/// Precomputed masks keyed by example id.
///
/// File format: one `example_id<TAB>id,id,...` line per example.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskCache {
    pub masks: BTreeMap<usize, VocabMask>,
}

impl MaskCache {
    pub fn get(&self, example: usize) -> Option<&VocabMask> {
        self.masks.get(&example)
    }

    pub fn insert(&mut self, example: usize, mask: VocabMask) {
        self.masks.insert(example, mask);
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (ex, mask) in &self.masks {
            let _ = write!(out, "{ex}\t");
            for (i, id) in mask.ids().iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{id}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, vocab_size: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cache = MaskCache::default();
        for (n, line) in text.lines().enumerate() {
            let bad = || Error::Data(format!("{}:{}: malformed mask line", path.display(), n + 1));
            let (ex, ids) = line.split_once('\t').ok_or_else(bad)?;
            let ex: usize = ex.parse().map_err(|_| bad())?;
            let ids = ids
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            cache.insert(ex, VocabMask::new(ids, vocab_size)?);
        }
        Ok(cache)
    }
}
