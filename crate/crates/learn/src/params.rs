use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LearnError, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors plus non-trainable buffers (normalization
/// running statistics). Registration order is the canonical order used by
/// optimizers and checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DenseTensor>,
    buffer_names: Vec<String>,
    buffers: Vec<DenseTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseTensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: DenseTensor) -> BufferId {
        self.buffer_names.push(name.into());
        self.buffers.push(value);
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &DenseTensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseTensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn buffer(&self, id: BufferId) -> &DenseTensor {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut DenseTensor {
        &mut self.buffers[id.0]
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(DenseTensor::len).sum()
    }

    /// `(name, shape)` of every parameter, then of every buffer.
    pub fn layout(&self) -> (Vec<(String, Vec<usize>)>, Vec<(String, Vec<usize>)>) {
        let describe = |names: &[String], ts: &[DenseTensor]| {
            names.iter().zip(ts).map(|(n, t)| (n.clone(), t.shape().to_vec())).collect()
        };
        (
            describe(&self.names, &self.values),
            describe(&self.buffer_names, &self.buffers),
        )
    }

    /// Parameters then buffers, flattened in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values
            .iter()
            .chain(&self.buffers)
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten); the layout must already match.
    pub fn load_flat(&mut self, values: &[f64]) -> Result<usize> {
        let needed: usize = self.values.iter().chain(&self.buffers).map(DenseTensor::len).sum();
        if values.len() < needed {
            return Err(LearnError::shape("parameter blob", &[needed], &[values.len()]));
        }
        let mut offset = 0;
        for t in self.values.iter_mut().chain(self.buffers.iter_mut()) {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(offset)
    }
}

/// He-uniform weights: `U(−√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    DenseTensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use beamsim_core::rng::rng_from_seed;

    #[test]
    fn flatten_roundtrip() {
        let mut s = ParamStore::new();
        let a = s.add("a", DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let b = s.add_buffer("b", DenseTensor::new(vec![1], vec![3.0]).unwrap());
        assert_eq!(s.flatten(), vec![1.0, 2.0, 3.0]);
        let mut t = s.clone();
        t.load_flat(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.get(a).data(), &[4.0, 5.0]);
        assert_eq!(t.buffer(b).data(), &[6.0]);
        assert!(t.load_flat(&[1.0]).is_err());
        assert_eq!(s.name(a), "a");
    }

    #[test]
    fn he_uniform_bounds_and_determinism() {
        let w = he_uniform(&[16, 24], 24, &mut rng_from_seed(1));
        let bound = 0.5;
        assert!(w.data().iter().all(|v| v.abs() < bound));
        assert_eq!(w, he_uniform(&[16, 24], 24, &mut rng_from_seed(1)));
    }
}
