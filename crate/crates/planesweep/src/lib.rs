//! File formats, configuration, parallel drivers and the pipeline stages
//! behind the `planesweep` command-line tool.
//!
//! The numerical work lives in [`planesweep_core`]; this crate reads and
//! writes bundles, cost volumes, depth maps, masks and reports, and runs the
//! expensive passes on a rayon pool.

pub mod bundle;
pub mod config;
pub mod error;
pub mod fmt;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "PLANESWEEP_THREADS";
