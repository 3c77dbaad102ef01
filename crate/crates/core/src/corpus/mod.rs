//! Data ingestion, vocabularies, synthetic tasks and batching.

mod batch;
mod data;
mod synthetic;
mod vocab;

pub use batch::{batch_iter, split_batch, Batch, SortKey};
pub use data::{
    examples_from_text, load_features, load_parallel, read_features, write_features, Example, Loaded,
    ParallelText, Source,
};
pub use synthetic::{make_synthetic_task, SyntheticSpec, SyntheticTask};
pub use vocab::{Vocabulary, BOS, EOS, NUM_SPECIALS, PAD, SPECIAL_TOKENS, UNK};

#[cfg(test)]
mod tests;
