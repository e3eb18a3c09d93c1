//! Link-level simulation core for RSRP-based beam prediction: planar-array
//! steering vectors, ray-sum OFDM channels, sectorized DFT codebooks,
//! synthetic scenarios, RSRP datasets and codebook-search baselines.

pub mod baseline;
pub mod channel;
pub mod codebook;
pub mod error;
pub mod geometry;
pub mod measurement;
pub mod parallel;
pub mod rng;
pub mod scenario;

pub use error::{Error, ErrorClass, Result};
