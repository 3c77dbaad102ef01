//! Live-byte accounting for tensor storage.
//!
//! Every tensor buffer registers its size with a thread-local counter on
//! creation and releases it on drop. [`MemoryScope`] reports the high-water
//! mark reached while it was open, relative to the live bytes at entry.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

fn register(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

fn release(bytes: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes currently held by tensor buffers on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(Cell::get)
}

/// Thread-wide high-water mark since the innermost open scope began.
pub fn peak_bytes() -> usize {
    PEAK.with(Cell::get)
}

/// Measures the peak of live tensor bytes above the level at entry.
#[derive(Debug)]
pub struct MemoryScope {
    start: usize,
    outer_peak: usize,
    closed: bool,
}

impl MemoryScope {
    pub fn begin() -> Self {
        let start = live_bytes();
        let outer_peak = PEAK.with(|p| p.replace(start));
        Self {
            start,
            outer_peak,
            closed: false,
        }
    }

    /// Peak bytes above the entry level observed so far.
    pub fn peak_above_start(&self) -> usize {
        peak_bytes().saturating_sub(self.start)
    }

    /// Closes the scope and returns the peak above the entry level.
    pub fn end(mut self) -> usize {
        let peak = self.peak_above_start();
        self.close();
        peak
    }

    fn close(&mut self) {
        if !self.closed {
            let inner = peak_bytes();
            PEAK.with(|p| p.set(inner.max(self.outer_peak)));
            self.closed = true;
        }
    }
}

impl Drop for MemoryScope {
    fn drop(&mut self) {
        self.close();
    }
}

/// Fixed-length storage whose bytes are tracked by the live counter.
#[derive(Debug, PartialEq)]
pub struct Buffer<T> {
    data: Vec<T>,
}

impl<T> Buffer<T> {
    pub fn from_vec(data: Vec<T>) -> Self {
        register(data.len() * std::mem::size_of::<T>());
        Self { data }
    }

    pub fn into_vec(mut self) -> Vec<T> {
        let data = std::mem::take(&mut self.data);
        release(data.len() * std::mem::size_of::<T>());
        data
    }
}

impl<T: Clone> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Self::from_vec(self.data.clone())
    }
}

impl<T> Drop for Buffer<T> {
    fn drop(&mut self) {
        release(self.data.len() * std::mem::size_of::<T>());
    }
}

impl<T> Deref for Buffer<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T> DerefMut for Buffer<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_allocation_raises_peak() {
        let scope = MemoryScope::begin();
        {
            let _big = Buffer::from_vec(vec![0.0f64; 1_000_000]);
        }
        assert!(scope.end() >= 8_000_000);
    }

    #[test]
    fn nested_scope_restores_outer_peak() {
        let outer = MemoryScope::begin();
        let a = Buffer::from_vec(vec![0u8; 1000]);
        drop(a);
        {
            let inner = MemoryScope::begin();
            let _b = Buffer::from_vec(vec![0u8; 10]);
            assert_eq!(inner.end(), 10);
        }
        assert_eq!(outer.end(), 1000);
    }

    #[test]
    fn into_vec_releases() {
        let start = live_bytes();
        let b = Buffer::from_vec(vec![1u32; 16]);
        assert_eq!(live_bytes(), start + 64);
        let v = b.into_vec();
        assert_eq!(live_bytes(), start);
        assert_eq!(v.len(), 16);
    }
}
