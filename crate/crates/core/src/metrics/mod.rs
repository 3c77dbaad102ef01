//! Reward and evaluation metrics, plus time and memory instrumentation.

mod bleu;
mod percentile;
mod timing;

pub use bleu::{bootstrap_bleu, corpus_bleu, gleu, BleuStats, BootstrapReport, NGramCounts, MAX_ORDER};
pub use percentile::{percentile_histogram, PercentileHistogram, NUM_BINS};
pub use timing::{alloc_counter, timing_scope, ScopeReport, TimingScope};

#[cfg(test)]
mod tests;
