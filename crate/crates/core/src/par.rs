//! Scenario-level data parallelism.
//!
//! With the `parallel` feature the helpers fan out over rayon's pool; without it
//! they run the same closures in a plain loop. Reductions always combine
//! fixed-size chunks in scenario order so results are bit-identical regardless
//! of thread count or feature choice.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Scenarios per reduction chunk. Changing it changes floating-point summation
/// order, so it is fixed.
pub const CHUNK: usize = 512;

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Like [`map_indexed`] but stops at the first error (lowest index wins).
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

/// Runs `f(chunk_index, chunk)` over consecutive `chunk_len` pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

/// Deterministic chunked reduction over `0..n`.
///
/// Each chunk of [`CHUNK`] indices is folded into a fresh accumulator, then the
/// partial accumulators are merged left to right.
pub fn chunked_reduce<A, I, F, M>(n: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, |c| {
        let mut acc = init();
        let end = ((c + 1) * CHUNK).min(n);
        for i in c * CHUNK..end {
            fold(&mut acc, i);
        }
        acc
    });
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}

/// Mean and standard error of per-scenario samples, summed in chunk order.
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let sum = chunked_reduce(n, || 0.0, |acc, i| *acc += samples[i], |a, b| *a += b);
    let mean = sum / n as f64;
    let ss = chunked_reduce(
        n,
        || 0.0,
        |acc, i| {
            let d = samples[i] - mean;
            *acc += d * d;
        },
        |a, b| *a += b,
    );
    let se = if n > 1 {
        (ss / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        0.0
    };
    (mean, se)
}

/// Caps the global worker pool. A no-op for sequential builds.
pub fn configure_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (directly when sequential).
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Workers available to the parallel helpers (1 for sequential builds).
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
