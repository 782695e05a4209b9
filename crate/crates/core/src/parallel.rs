//! Worker-thread control. `HSICT_THREADS` caps parallelism: 0 or 1 forces
//! the sequential path, any larger value sizes the pool, unset uses all
//! cores. Every parallel site writes disjoint output chunks with a fixed
//! per-chunk computation order, so results are bit-identical regardless of
//! thread count.

use std::sync::OnceLock;

use rayon::prelude::*;

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let threads = match std::env::var("HSICT_THREADS") {
            Ok(s) => s.trim().parse::<usize>().unwrap_or(0),
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        if threads <= 1 {
            None
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .ok()
        }
    })
    .as_ref()
}

/// Split `data` into `chunk`-sized pieces and run `f(chunk_index, piece)`
/// on each, in parallel when a pool is configured.
pub fn for_each_chunk_mut<T: Send, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(chunk > 0);
    match pool() {
        Some(p) => p.install(|| {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, piece)| f(i, piece));
        }),
        None => {
            for (i, piece) in data.chunks_mut(chunk).enumerate() {
                f(i, piece);
            }
        }
    }
}
