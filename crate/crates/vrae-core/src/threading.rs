//! Intra-op parallelism with bit-stable results.
//!
//! Work is split into chunks that own disjoint output slices; every output
//! element is accumulated by exactly one chunk in a fixed sequential order,
//! so results are bit-identical for *any* thread count. The global thread
//! count defaults to 1 and is set once by the caller (CLI flag or
//! `VRAE_THREADS`).

use std::sync::atomic::{AtomicUsize, Ordering};

static THREADS: AtomicUsize = AtomicUsize::new(1);

pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Runs `f(chunk_index, chunk)` over consecutive `chunk_len` slices of
/// `data`, distributing chunks over the configured number of threads.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk_len > 0 && data.len().is_multiple_of(chunk_len));
    let n_chunks = data.len() / chunk_len;
    let n_threads = threads().min(n_chunks.max(1));
    if n_threads <= 1 || cfg!(target_arch = "wasm32") {
        for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
        return;
    }
    // Deal chunks round-robin so uneven work (e.g. tail batches) spreads out.
    let mut buckets: Vec<Vec<(usize, &mut [T])>> = (0..n_threads).map(|_| Vec::new()).collect();
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        buckets[i % n_threads].push((i, chunk));
    }
    std::thread::scope(|scope| {
        for bucket in buckets {
            let f = &f;
            scope.spawn(move || {
                for (i, chunk) in bucket {
                    f(i, chunk);
                }
            });
        }
    });
}
