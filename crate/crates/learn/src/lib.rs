//! Training and inference for beam-index prediction from coarse RSRP maps.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod regnet;
pub mod softmax_ref;
pub mod tensor;
pub mod train;

pub use error::{LearnError, Result};
