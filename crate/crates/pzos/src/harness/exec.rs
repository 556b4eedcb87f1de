//! Job execution: data-parallel over instances via rayon when the
//! `parallel` feature is on, with a sequential path that is always
//! available. Results are returned in input order, so scheduling never
//! affects output.

/// Run `f` over `items`, returning results in input order.
///
/// `workers` semantics: 0 uses all cores (or sequential without the
/// `parallel` feature), 1 forces sequential, k > 1 uses a pool of k.
pub fn run_jobs<T, R, F>(workers: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    if workers == 1 {
        return run_jobs_sequential(items, f);
    }
    run_jobs_parallel(workers, items, f)
}

/// Sequential reference path, used by `run_jobs` for workers = 1 and by the
/// benchmark suite as the comparison baseline.
pub fn run_jobs_sequential<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn run_jobs_parallel<T, R, F>(workers: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if workers == 0 {
        items.into_par_iter().map(f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool");
        pool.install(|| items.into_par_iter().map(f).collect())
    }
}

#[cfg(not(feature = "parallel"))]
fn run_jobs_parallel<T, R, F>(_workers: usize, items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    run_jobs_sequential(items, f)
}
