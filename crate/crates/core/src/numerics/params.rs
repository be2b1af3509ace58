use std::collections::HashMap;
use std::sync::Arc;

use super::{Scalar, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors.
///
/// Storage is reference counted so binding a parameter to a graph is free;
/// mutation goes through copy-on-write and therefore never disturbs a graph
/// that still holds the old value.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<F>>>,
    frozen: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), frozen: Vec::new(), index: HashMap::new() }
    }

    /// Panics on duplicate names; parameter layouts are fixed by model code.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(Arc::new(tensor));
        self.frozen.push(false);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, i: usize) -> &Tensor<F> {
        &self.tensors[i]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn tensor_arc(&self, i: usize) -> &Arc<Tensor<F>> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        self.tensor_mut(id.0)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Same names and values in another precision.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
            frozen: self.frozen.clone(),
            index: self.index.clone(),
        }
    }

    /// True when both stores share storage for every tensor.
    pub fn shares_storage_with(&self, other: &ParamStore<F>) -> bool {
        self.len() == other.len() && self.tensors.iter().zip(&other.tensors).all(|(a, b)| Arc::ptr_eq(a, b))
    }
}
