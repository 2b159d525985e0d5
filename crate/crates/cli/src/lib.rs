//! Command layer: dataset and run artifacts on disk, one directory per run,
//! every run reproducible from its manifest.

use std::sync::OnceLock;

pub mod bundle;
pub mod commands;
pub mod config;
pub mod strip;
pub mod study;

/// Caps the rayon pool from MINIVP_WORKERS once per process. Later calls
/// keep the first winner; tests share one pool.
pub fn init_workers() {
    static POOL: OnceLock<usize> = OnceLock::new();
    POOL.get_or_init(|| {
        let workers = std::env::var("MINIVP_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0);
        if let Some(n) = workers {
            // Ignore failure: a pool may already exist in-process.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
            n
        } else {
            0
        }
    });
}
