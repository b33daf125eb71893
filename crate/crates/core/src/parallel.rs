//! Order-preserving data parallelism over scoped threads.

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "SGLAB_WORKERS";

/// Workers to use: `SGLAB_WORKERS` if set to a positive integer, else the
/// available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Splits `items` into at most `workers` contiguous chunks, maps each chunk on
/// its own thread, and returns the chunk results in order.
pub fn map_chunks<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return vec![f(items)];
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| f(c))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Order-preserving parallel map.
pub fn map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    map_chunks(items, workers, |c| c.iter().map(&f).collect::<Vec<_>>()).into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_for_any_worker_count() {
        let xs: Vec<u64> = (0..37).collect();
        let serial: Vec<u64> = xs.iter().map(|x| x * x).collect();
        for w in [1, 2, 3, 8, 64] {
            assert_eq!(map(&xs, w, |x| x * x), serial);
        }
        assert_eq!(map(&[] as &[u64], 4, |x| *x), Vec::<u64>::new());
    }

    #[test]
    fn chunks_are_contiguous() {
        let xs: Vec<usize> = (0..10).collect();
        let sums = map_chunks(&xs, 3, |c| c.to_vec());
        assert_eq!(sums.concat(), xs);
        assert_eq!(sums.len(), 3);
    }
}
