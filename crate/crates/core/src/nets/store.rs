use indexmap::IndexMap;
use thiserror::Error;

use crate::numerics::{adam_step, AdamConfig, AdamError, AdamState, ShapeError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("parameter `{0}` is already registered")]
    Duplicate(String),
    #[error("no parameter named `{0}`")]
    Unknown(String),
    #[error("parameter `{name}`: {source}")]
    Adam { name: String, source: AdamError },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam: AdamState,
}

/// Named trainable tensors (with gradients and ADAM moments) plus named
/// non-trainable buffers. Iteration order is insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: IndexMap<String, ParamEntry>,
    buffers: IndexMap<String, Tensor>,
    adam: AdamConfig,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_adam(adam: AdamConfig) -> Self {
        ParamStore {
            adam,
            ..Self::default()
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        self.adam
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId, StoreError> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(StoreError::Duplicate(name.to_owned()));
        }
        let shape = value.shape().to_vec();
        let (idx, _) = self.params.insert_full(
            name.to_owned(),
            ParamEntry {
                grad: Tensor::zeros(&shape),
                adam: AdamState::new(&shape, self.adam),
                value,
            },
        );
        Ok(ParamId(idx))
    }

    pub(crate) fn insert_entry(&mut self, name: String, entry: ParamEntry) -> Result<(), StoreError> {
        if self.params.contains_key(&name) {
            return Err(StoreError::Duplicate(name));
        }
        self.params.insert(name, entry);
        Ok(())
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor) -> Result<(), StoreError> {
        if self.params.contains_key(name) {
            return Err(StoreError::Duplicate(name.to_owned()));
        }
        self.buffers.insert(name.to_owned(), value);
        Ok(())
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.params.keys().any(|k| k.starts_with(prefix))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, StoreError> {
        self.params
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| StoreError::Unknown(name.to_owned()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid id")
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.params[id.0]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.values().map(|e| e.value.len()).sum()
    }

    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer {
            grads: self.params.values().map(|e| Tensor::zeros(e.value.shape())).collect(),
        }
    }

    pub fn zero_grads(&mut self) {
        for e in self.params.values_mut() {
            e.grad.fill(0.0);
        }
    }

    /// Adds `buffer` into the stored gradients.
    pub fn accumulate(&mut self, buffer: &GradBuffer) -> Result<(), StoreError> {
        for (e, g) in self.params.values_mut().zip(&buffer.grads) {
            e.grad.add_assign(g)?;
        }
        Ok(())
    }

    /// ADAM step on every parameter using its stored gradient.
    pub fn adam_step_all(&mut self) -> Result<(), StoreError> {
        for (name, e) in self.params.iter_mut() {
            adam_step(&mut e.value, &e.grad, &mut e.adam).map_err(|source| StoreError::Adam {
                name: name.clone(),
                source,
            })?;
        }
        Ok(())
    }
}

/// Gradients laid out parallel to a [`ParamStore`], written by backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Tensor>,
}

impl GradBuffer {
    pub fn add(&mut self, id: ParamId, g: &Tensor) {
        self.grads[id.0].add_assign(g).expect("gradient shape matches parameter");
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            *g = g.scale(k);
        }
    }

    pub fn add_all(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b).expect("same layout");
        }
    }

    /// All gradients flattened in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|g| g.data().iter().copied()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.register("a", Tensor::zeros(&[2])).unwrap();
        assert_eq!(
            s.register("a", Tensor::zeros(&[3])).unwrap_err(),
            StoreError::Duplicate("a".into())
        );
    }

    #[test]
    fn accumulation_is_additive() {
        let mut s = ParamStore::new();
        let a = s.register("a", Tensor::zeros(&[2])).unwrap();
        let mut g1 = s.grad_buffer();
        g1.add(a, &Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let mut g2 = s.grad_buffer();
        g2.add(a, &Tensor::new(&[2], vec![0.5, -1.0]).unwrap());
        s.accumulate(&g1).unwrap();
        s.accumulate(&g2).unwrap();
        assert_eq!(s.entry(a).grad.data(), &[1.5, 1.0]);
        s.zero_grads();
        assert_eq!(s.entry(a).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_error_names_parameter() {
        let mut s = ParamStore::new();
        let a = s.register("enc/w", Tensor::zeros(&[1])).unwrap();
        let mut g = s.grad_buffer();
        g.add(a, &Tensor::scalar(1.0).map(|v| v / 0.0));
        s.accumulate(&g).unwrap();
        let err = s.adam_step_all().unwrap_err();
        assert!(err.to_string().contains("enc/w"));
    }
}
