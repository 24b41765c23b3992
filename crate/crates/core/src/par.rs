//! Trial-level data parallelism with a sequential fallback.
//!
//! Results are always returned in index order, so parallel and serial runs
//! produce identical output.

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "UWBCALIB_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Serial,
    /// Falls back to serial when built without the `parallel` feature.
    #[default]
    Parallel,
}

/// Thread cap from [`THREADS_ENV`]; `None` when unset, empty or invalid.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Serial => (0..n).map(f).collect(),
        Execution::Parallel => parallel_map(n, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect();
    match thread_cap() {
        Some(threads) => match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_serial_in_order() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_indexed(257, Execution::Serial, f);
        let b = map_indexed(257, Execution::Parallel, f);
        assert_eq!(a, b);
        assert!(map_indexed(0, Execution::Parallel, f).is_empty());
    }
}
