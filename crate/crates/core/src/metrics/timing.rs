use std::time::{Duration, Instant};

use crate::tensor::alloc::{self, MemoryScope};

/// Wall-clock and tensor-memory measurement over a region of code.
#[derive(Debug)]
pub struct TimingScope {
    label: String,
    start: Instant,
    memory: MemoryScope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScopeReport {
    pub label: String,
    pub elapsed: Duration,
    /// Tensor bytes live at the high-water mark, above the level at entry.
    pub peak_bytes: usize,
}

pub fn timing_scope(label: impl Into<String>) -> TimingScope {
    TimingScope { label: label.into(), start: Instant::now(), memory: MemoryScope::begin() }
}

impl TimingScope {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    pub fn finish(self) -> ScopeReport {
        let elapsed = self.start.elapsed();
        let peak_bytes = self.memory.end();
        ScopeReport { label: self.label, elapsed, peak_bytes }
    }
}

/// High-water mark of live tensor bytes on this thread since the innermost
/// open scope began.
pub fn alloc_counter() -> usize {
    alloc::peak_bytes()
}
