//! Minimal work-stealing helper for deterministic data parallelism.
//!
//! Work is split into chunks whose boundaries depend only on the input (never
//! on the worker count); workers claim chunk indices from an atomic counter
//! and results are returned in chunk order, so any reduction over them is
//! reproducible regardless of how many threads ran.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Run `f(chunk_index)` for every index in `0..num_chunks` on up to `workers`
/// threads and return the results in index order.
pub(crate) fn run_chunked<R, F>(num_chunks: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    if num_chunks == 0 {
        return Vec::new();
    }
    let threads = workers.max(1).min(num_chunks);
    if threads == 1 {
        return (0..num_chunks).map(f).collect();
    }

    let counter = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = (0..num_chunks).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let idx = counter.fetch_add(1, Ordering::Relaxed);
                if idx >= num_chunks {
                    break;
                }
                let r = f(idx);
                *slots[idx].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("chunk not computed"))
        .collect()
}
