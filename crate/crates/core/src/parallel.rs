//! Data-parallel helpers with a sequential fallback.
//!
//! Built with the `parallel` feature (the default) these dispatch to rayon;
//! without it they always run sequentially and rayon is not compiled in.
//! With the feature on, [`set_parallel`] toggles execution at runtime, which
//! is what the benchmark suite uses to compare the two paths in one binary.
//!
//! Every helper hands each closure a disjoint chunk and performs no
//! cross-chunk reduction, so results are bitwise independent of the thread
//! count and schedule.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Enable or disable the rayon path at runtime. No-op without the
/// `parallel` feature.
pub fn set_parallel(enabled: bool) {
    #[cfg(feature = "parallel")]
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = enabled;
}

pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL_ENABLED.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Apply `f` to consecutive `chunk_len` chunks of `data`, passing the chunk
/// index. Chunks are disjoint, so this parallelizes without changing results.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Like [`for_each_chunk`] but walks two equally-chunked buffers in lockstep
/// (e.g. an output tensor and its per-element argmax cache).
pub fn for_each_chunk2<A, B, F>(a: &mut [A], b: &mut [B], chunk_len: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync,
{
    debug_assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        a.par_chunks_mut(chunk_len)
            .zip(b.par_chunks_mut(chunk_len))
            .enumerate()
            .for_each(|(i, (ca, cb))| f(i, ca, cb));
        return;
    }
    for (i, (ca, cb)) in a.chunks_mut(chunk_len).zip(b.chunks_mut(chunk_len)).enumerate() {
        f(i, ca, cb);
    }
}
