use rayon::prelude::*;

/// Maps `f` over `items` on a pool of `workers` threads, giving each worker
/// its own state from `init`. Output order matches input order.
pub(crate) fn map_with_state<T, S, R, I, F>(workers: usize, items: &[T], init: I, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &T) -> R + Sync + Send,
{
    let workers = workers.max(1);
    if workers == 1 || items.len() < 2 {
        let mut state = init();
        return items.iter().map(|item| f(&mut state, item)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map_init(&init, |s, item| f(s, item)).collect())
}
