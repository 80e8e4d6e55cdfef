//! Per-item map helpers with a rayon route and a sequential route.
//!
//! Output order always equals input order, so reductions over the results are
//! deterministic regardless of which route ran.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with every `map`/`try_map` issued from this thread forced onto
/// the sequential route. Used by benches and by callers that already own
/// their parallelism.
pub fn with_sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

/// True when the rayon route is compiled in and not overridden.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|c| c.get())
}

pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Like [`map`], stopping at an error. When several items fail, the error
/// reported is the one with the lowest index on both routes.
pub fn try_map<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<U, E> + Sync + Send,
{
    let results = map(items, f);
    results.into_iter().collect()
}

/// Sequential reference route, always available.
pub fn map_sequential<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}
