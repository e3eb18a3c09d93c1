//! Mini-batch assembly from dataset samples.

use beamsim_core::measurement::DatasetSample;
use serde::{Deserialize, Serialize};

use crate::error::{LearnError, Result};
use crate::tensor::DenseTensor;

/// Per-axis standardization of UE positions, fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionScaler {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PositionScaler {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl PositionScaler {
    pub fn fit(samples: &[&DatasetSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(LearnError::Data("cannot fit a position scaler on no samples".into()));
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for axis in 0..3 {
            mean[axis] = samples.iter().map(|s| f64::from(s.position[axis])).sum::<f64>() / n;
            let var = samples
                .iter()
                .map(|s| (f64::from(s.position[axis]) - mean[axis]).powi(2))
                .sum::<f64>()
                / n;
            // constant axes (fixed UE height) map to zero
            std[axis] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn forward(&self, p: [f32; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (f64::from(p[i]) - self.mean[i]) / self.std[i])
    }

    pub fn inverse(&self, z: &[f64]) -> [f64; 3] {
        std::array::from_fn(|i| z[i] * self.std[i] + self.mean[i])
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `B × feature_len`.
    pub x: DenseTensor,
    pub sectors: Vec<usize>,
    pub labels: Vec<usize>,
    /// Standardized targets, `B × 3`.
    pub positions: DenseTensor,
}

impl Batch {
    pub fn new(samples: &[&DatasetSample], scaler: &PositionScaler) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(LearnError::Data("empty batch".into()));
        };
        let width = first.features.len();
        let mut x = Vec::with_capacity(samples.len() * width);
        let mut positions = Vec::with_capacity(samples.len() * 3);
        for s in samples {
            if s.features.len() != width {
                return Err(LearnError::shape("sample features", &[width], &[s.features.len()]));
            }
            x.extend(s.features.iter().map(|&v| f64::from(v)));
            positions.extend(scaler.forward(s.position));
        }
        Ok(Self {
            x: DenseTensor::new(vec![samples.len(), width], x)?,
            sectors: samples.iter().map(|s| s.sector.index()).collect(),
            labels: samples.iter().map(|s| s.label as usize).collect(),
            positions: DenseTensor::new(vec![samples.len(), 3], positions)?,
        })
    }

    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }
}
