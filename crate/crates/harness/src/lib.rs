//! Command-line harness around `latstruct`: finite-difference gradient checks,
//! estimator benchmarks and desk-scale demonstrations, emitting JSON or CSV.
//!
//! Every subcommand is a plain function from a config and a seed to a
//! serializable report, so outputs are bitwise reproducible and usable from
//! tests without spawning the binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod game;
pub mod gradcheck;
pub mod matching;
pub mod output;
pub mod stats;
pub mod treeskew;

pub use error::{HarnessError, Result};
pub use output::{Artifact, Format};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Options shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// `None` picks the subcommand's natural format.
    pub format: Option<Format>,
    /// Worker threads for independent replicates.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            format: None,
            jobs: 1,
        }
    }
}
