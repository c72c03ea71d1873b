use rand::Rng;

use super::{Gradients, Graph, NodeId};
use crate::tensor::Tensor;

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.push((name.into(), value));
    }

    /// Adds a tensor drawn uniformly from `±sqrt(1 / fan_in)`.
    pub fn push_fan_in<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        self.push(name, Tensor::uniform(shape.to_vec(), -bound, bound, rng));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Places every tensor on `graph`, as variables when `trainable` and as constants otherwise.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let ids = self
            .entries
            .iter()
            .map(|(n, t)| {
                let id = if trainable {
                    graph.variable(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (n.clone(), id)
            })
            .collect();
        BoundParams { ids }
    }
}

/// Graph handles for a bound [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    ids: Vec<(String, NodeId)>,
}

impl BoundParams {
    /// Handle for `name`. Panics on unknown names: model code owns its parameter layout.
    pub fn id(&self, name: &str) -> NodeId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids.iter().map(|(_, id)| *id)
    }

    /// Gradients for every bound parameter, in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.ids().map(|id| grads.wrt(id)).collect()
    }
}
