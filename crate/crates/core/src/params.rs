//! Named parameter storage, initialisation and gradient buffers.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::graph::Graph;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers such as batch-norm running statistics are stored but never optimised.
    pub trainable: bool,
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Total number of scalar values held.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Replaces the value of `name`, which must exist with the same shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(dim_err("param_set", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Copies every tensor of `other` whose name starts with `prefix` into `self`.
    /// Returns the number of tensors copied.
    pub fn load_prefix(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for e in other.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            self.set(&e.name, e.value.clone())?;
            n += 1;
        }
        Ok(n)
    }
}

/// Gradient buffer aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    /// Collects parameter gradients after [`Graph::backward`].
    pub fn from_graph(graph: &Graph, store: &ParamStore) -> Self {
        let mut g = Self::zeros_like(store);
        g.accumulate_graph(graph, store);
        g
    }

    pub fn accumulate_graph(&mut self, graph: &Graph, store: &ParamStore) {
        for id in store.ids() {
            if let Some(src) = graph.param_grad(id) {
                self.add_slice(id, src);
            }
        }
    }

    fn add_slice(&mut self, id: ParamId, src: &[f64]) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(src).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(src.to_vec()),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add_slice(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Parameter initialiser: truncated normal projections, zero biases, unit norm gains.
#[derive(Debug, Clone)]
pub struct Init {
    pub rng: Rng,
    pub std: f64,
}

impl Init {
    pub fn new(seed: u64, std: f64) -> Self {
        Self {
            rng: Rng::new(seed),
            std,
        }
    }

    pub fn normal(&mut self, shape: &[usize]) -> Tensor {
        let std = self.std;
        self.normal_with(shape, std)
    }

    pub fn normal_with(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.truncated_normal(std)).collect();
        Tensor::new(shape, data).expect("init shape")
    }
}
