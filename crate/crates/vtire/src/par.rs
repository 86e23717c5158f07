//! Bounded fan-out over independent work items.
//!
//! Results are always merged in input order, so the worker count never
//! changes any numeric output, only wall-clock time.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Worker count: explicit setting, else `VTIRE_WORKERS`, else the number of
/// available CPUs.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    if let Some(n) = requested {
        return n.max(1);
    }
    if let Ok(v) = std::env::var("VTIRE_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Map `f` over `0..n`, returning results in index order.
///
/// With `workers == 1` this is a plain sequential loop; otherwise items are
/// pulled from a shared counter by `workers` threads.
pub fn map_indexed<R: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> R + Sync,
) -> Vec<R> {
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("worker produced no result"))
        .collect()
}
