//! Evaluation, experiment protocols and reporting on top of the simulator
//! and learner crates. The `beamsim` binary is a thin CLI over this library.

pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod metrics;
pub mod report;

use sha2::{Digest, Sha256};

pub use error::{AppError, Result};
pub use evaluate::{evaluate_policy, run_policy, EvalOptions, EvalReport, Policy};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
