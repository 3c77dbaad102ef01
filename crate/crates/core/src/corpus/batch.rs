use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Example;
use crate::error::{Error, Result};

/// Length used to order examples inside a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SortKey {
    #[default]
    Source,
    Target,
}

/// A mini-batch of borrowed examples, longest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<'a> {
    pub examples: Vec<&'a Example>,
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.id).collect()
    }
}

fn sort_len(e: &Example, key: SortKey) -> usize {
    match key {
        SortKey::Source => e.source.len(),
        SortKey::Target => e.target.len(),
    }
}

/// Splits one epoch into batches of `batch_size` (the last may be short).
/// With a seed the example order is shuffled first. Each batch is sorted
/// by length, descending, ties kept in epoch order.
pub fn batch_iter<'a>(
    examples: &'a [Example],
    batch_size: usize,
    seed: Option<u64>,
    key: SortKey,
) -> impl Iterator<Item = Batch<'a>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<&'a Example> = examples.iter().collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let batches: Vec<Batch<'a>> = order
        .chunks(batch_size)
        .map(|chunk| {
            let mut ex = chunk.to_vec();
            ex.sort_by_key(|e| std::cmp::Reverse(sort_len(e, key)));
            Batch { examples: ex }
        })
        .collect();
    batches.into_iter()
}

/// Cuts a batch into `s` contiguous parts whose sizes differ by at most one.
pub fn split_batch<'a>(batch: &Batch<'a>, s: usize) -> Result<Vec<Batch<'a>>> {
    if s == 0 || s > batch.len() {
        return Err(Error::Invalid(format!("cannot split {} examples into {s} sets", batch.len())));
    }
    let base = batch.len() / s;
    let extra = batch.len() % s;
    let mut out = Vec::with_capacity(s);
    let mut start = 0;
    for i in 0..s {
        let n = base + usize::from(i < extra);
        out.push(Batch { examples: batch.examples[start..start + n].to_vec() });
        start += n;
    }
    Ok(out)
}
