use crate::error::{Error, Result};

use super::rng::SeededRng;
use super::tensor::{Scalar, Tensor};

/// Index of a parameter inside a [`Parameters`] arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub gradient: Tensor<S>,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Self {
        let gradient = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            gradient,
        }
    }

    pub fn zero_grad(&mut self) {
        self.gradient.fill(S::zero());
    }
}

static ARENA_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Arena owning every parameter of a model. Names are unique; insertion order
/// is the checkpoint order. Each arena carries a process-unique id so a graph
/// never confuses leaves from different arenas.
#[derive(Debug)]
pub struct Parameters<S: Scalar> {
    arena_id: u64,
    entries: Vec<Parameter<S>>,
}

impl<S: Scalar> Default for Parameters<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Clone for Parameters<S> {
    /// Clones get their own arena identity: a clone is a new set of values,
    /// not an alias of the original.
    fn clone(&self) -> Self {
        Parameters {
            arena_id: ARENA_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
            entries: self.entries.clone(),
        }
    }
}

impl<S: Scalar> Parameters<S> {
    pub fn new() -> Self {
        Parameters {
            arena_id: ARENA_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
            entries: Vec::new(),
        }
    }

    pub fn arena_id(&self) -> u64 {
        self.arena_id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.entries.push(Parameter::new(name, value));
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Glorot-uniform tensor: U(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut SeededRng,
    ) -> Result<ParamId> {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        rng.fill_uniform(t.data_mut(), -s, s);
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<S>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self, ids: &[ParamId]) {
        for &id in ids {
            self.entries[id.0].zero_grad();
        }
    }

    pub fn zero_all_grads(&mut self) {
        for p in &mut self.entries {
            p.zero_grad();
        }
    }

    /// Ids whose names start with `prefix` (sub-network selection).
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Snapshot of raw values, for change-detection in tests.
    pub fn value_snapshot(&self) -> Vec<Vec<S>> {
        self.entries.iter().map(|p| p.value.data().to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = Parameters::<f32>::new();
        ps.add("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(ps.add("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mut ps = Parameters::<f64>::new();
        let mut rng = SeededRng::new(0);
        let id = ps.add_glorot("w", &[100, 50], 100, 50, &mut rng).unwrap();
        let s = (6.0 / 150.0f64).sqrt();
        assert!(ps.get(id).value.data().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn prefix_selection() {
        let mut ps = Parameters::<f32>::new();
        ps.add("encoder.w1", Tensor::zeros(&[1])).unwrap();
        ps.add("decoder.w1", Tensor::zeros(&[1])).unwrap();
        ps.add("encoder.b1", Tensor::zeros(&[1])).unwrap();
        assert_eq!(ps.ids_with_prefix("encoder.").len(), 2);
        assert_eq!(ps.ids_with_prefix("decoder.").len(), 1);
    }
}
