//! File formats, run configuration, training loop and command-line
//! plumbing around [`ts3d_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod evaluate;
pub mod heatmap;
pub mod image;
pub mod infer;
pub mod kitti;
pub mod train;

pub use error::{Error, Result};

/// Builds the global worker pool, capped by `TS3D_THREADS` when set.
pub fn init_threads() -> Result<usize> {
    let n = match std::env::var("TS3D_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("TS3D_THREADS=`{v}` is not a positive integer")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    // A pool that already exists (tests, repeated calls) is left alone.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(rayon::current_num_threads())
}
