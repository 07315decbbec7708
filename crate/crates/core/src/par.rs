//! Worker-pool helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work items are distributed over a
//! rayon pool sized by the caller; without it, or with `workers <= 1`, the
//! same closures run on the current thread. Outputs are collected in item
//! order, so results never depend on scheduling or worker count.

/// Resolve a requested worker count; `0` means available parallelism.
pub fn effective_workers(requested: usize) -> usize {
    if requested == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        requested
    }
}

#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(workers: usize, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let workers = effective_workers(workers);
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("failed to build worker pool");
    pool.install(|| {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    })
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(_workers: usize, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Map over fixed-size index blocks. The block structure depends only on
/// `n` and `block_len`, so per-block partial results (and any reduction the
/// caller performs in block order) are identical for every worker count.
pub fn map_blocks<R, F>(workers: usize, n: usize, block_len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    assert!(block_len > 0);
    let nblocks = n.div_ceil(block_len);
    map_indexed(workers, nblocks, |b| {
        let lo = b * block_len;
        let hi = (lo + block_len).min(n);
        f(lo..hi)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_regardless_of_workers() {
        let seq = map_indexed(1, 100, |i| i * i);
        let par = map_indexed(4, 100, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn block_sums_match_sequential() {
        let n = 1003;
        let blocks = map_blocks(4, n, 64, |r| r.map(|i| i as u64).sum::<u64>());
        let total: u64 = blocks.iter().sum();
        assert_eq!(total, (n as u64 - 1) * n as u64 / 2);
    }
}
