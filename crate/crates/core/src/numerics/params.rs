use std::collections::HashMap;
use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors with gradient buffers of identical shape.
///
/// Values are reference counted so a graph can hold them without copying;
/// updates go through [`ParamStore::value_mut`] once graphs are dropped.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    grads: Vec<Tensor>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.values.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(Arc::new(value));
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
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

    /// Parameters whose names start with `prefix`, in insertion order.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.names[id.0].starts_with(prefix))
            .collect()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.lookup.get(name).copied().ok_or_else(|| Error::Lookup {
            kind: "parameter",
            id: name.to_string(),
        })
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.values[id.0])
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Named values in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.as_str(), v.as_ref()))
    }
}
