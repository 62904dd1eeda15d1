//! Batch-chunked execution.
//!
//! Kernels that reduce over the batch (weight gradients, bias gradients)
//! always accumulate per fixed-size chunk and then fold the chunk partials in
//! chunk order. Chunk boundaries depend only on the batch size, so the
//! floating-point result is bit-identical whether chunks run on one thread or
//! many. Deterministic mode therefore only pins the execution to a single
//! thread; it never changes the numbers.

use rayon::prelude::*;
use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

/// Samples per work chunk.
pub const BATCH_CHUNK: usize = 8;

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

/// Forces all kernels onto the calling thread.
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst)
}

fn ranges(n_samples: usize) -> Vec<Range<usize>> {
    (0..n_samples)
        .step_by(BATCH_CHUNK)
        .map(|s| s..(s + BATCH_CHUNK).min(n_samples))
        .collect()
}

/// Runs `f` once per sample chunk; partial results come back in chunk order.
pub fn run_chunks<R, F>(n_samples: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync,
{
    let ranges = ranges(n_samples);
    if deterministic() {
        ranges.into_iter().map(f).collect()
    } else {
        ranges.into_par_iter().map(f).collect()
    }
}

/// Like [`run_chunks`], but also hands each chunk its disjoint block of an
/// output buffer laid out as `n_samples` rows of `per_sample` scalars.
pub fn run_chunks_mut<T, R, F>(out: &mut [T], n_samples: usize, per_sample: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(Range<usize>, &mut [T]) -> R + Sync,
{
    assert_eq!(out.len(), n_samples * per_sample);
    let ranges = ranges(n_samples);
    if deterministic() {
        out.chunks_mut(BATCH_CHUNK * per_sample)
            .zip(ranges)
            .map(|(block, r)| f(r, block))
            .collect()
    } else {
        out.par_chunks_mut(BATCH_CHUNK * per_sample)
            .zip(ranges)
            .map(|(block, r)| f(r, block))
            .collect()
    }
}
