//! Shared worker pool. `BEAMSIM_THREADS` caps its size; unset or invalid
//! values fall back to the machine's available parallelism.

use std::sync::OnceLock;

use rayon::{ThreadPool, ThreadPoolBuilder};

pub const THREADS_ENV: &str = "BEAMSIM_THREADS";

fn parse_threads(value: Option<&str>) -> Option<usize> {
    value?.trim().parse::<usize>().ok().filter(|&n| n > 0)
}

pub fn configured_threads() -> usize {
    let raw = std::env::var(THREADS_ENV).ok();
    match parse_threads(raw.as_deref()) {
        Some(n) => n,
        None => {
            if let Some(v) = raw {
                log::warn!("ignoring {THREADS_ENV}={v:?}; expected a positive integer");
            }
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        ThreadPoolBuilder::new()
            .num_threads(configured_threads())
            .thread_name(|i| format!("beamsim-{i}"))
            .build()
            .expect("failed to start worker pool")
    })
}

/// Runs `f` inside the shared pool so its rayon iterators use it.
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    pool().install(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_setting_parsing() {
        assert_eq!(parse_threads(Some("4")), Some(4));
        assert_eq!(parse_threads(Some(" 2 ")), Some(2));
        assert_eq!(parse_threads(Some("0")), None);
        assert_eq!(parse_threads(Some("many")), None);
        assert_eq!(parse_threads(None), None);
    }

    #[test]
    fn install_runs_closure() {
        use rayon::prelude::*;
        let total: u64 = install(|| (1..=100u64).into_par_iter().sum());
        assert_eq!(total, 5050);
    }
}
