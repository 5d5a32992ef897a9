//! Replicate execution: data-parallel with a sequential fallback.
//!
//! Replicates are the unit of parallelism. Results are always returned in
//! replicate order — never completion order — so any aggregation downstream
//! sees the same sequence regardless of worker count, and outputs stay
//! byte-identical between 1 worker and N workers.

/// Run `task(0), …, task(count−1)` and return results in index order.
///
/// With the `parallel` feature (default), replicates run on a rayon pool:
/// the global pool when `jobs` is `None`, a dedicated pool of that size
/// otherwise. `jobs = Some(1)`, or builds without the feature, run on the
/// current thread. The task must be a pure function of the replicate index
/// (plus captured immutable state) for the scheduling guarantee to mean
/// anything; all samplers in this crate derive per-replicate RNG streams,
/// which makes that automatic.
pub fn run_replicates<T, F>(count: usize, jobs: Option<usize>, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if count == 0 {
        return Vec::new();
    }
    match jobs {
        Some(1) => (0..count).map(task).collect(),
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .expect("thread pool construction");
            pool.install(|| {
                use rayon::prelude::*;
                (0..count).into_par_iter().map(task).collect()
            })
        }
        #[cfg(feature = "parallel")]
        None => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(task).collect()
        }
        #[cfg(not(feature = "parallel"))]
        _ => (0..count).map(task).collect(),
    }
}

/// Worker count actually used when `jobs` is unspecified.
pub fn default_jobs() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
