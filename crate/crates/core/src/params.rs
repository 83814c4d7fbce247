use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;

/// Handle into a [`LayerParams`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// One named tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<R>,
    pub grad: Vec<R>,
    pub m: Vec<R>,
    pub v: Vec<R>,
    /// Batch-norm running statistics are stored here too, but the optimizer
    /// skips them and they do not count as parameters.
    pub trainable: bool,
}

impl<R: Real> Param<R> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Ordered store of named parameters. Names are unique; insertion order is
/// the checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct LayerParams<R> {
    entries: Vec<Param<R>>,
    index: HashMap<String, usize>,
}

impl<R: Real> LayerParams<R> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<R>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let n: usize = shape.iter().product();
        if value.len() != n {
            return Err(Error::Dimension(format!(
                "parameter {name:?}: {} values for shape {shape:?}",
                value.len()
            )));
        }
        let id = self.entries.len();
        self.entries.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![R::zero(); n],
            m: vec![R::zero(); n],
            v: vec![R::zero(); n],
            value,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Param<R> {
        &self.entries[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<R> {
        &mut self.entries[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[R] {
        &self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<R>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<R>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[R]) {
        let p = &mut self.entries[id.0];
        assert_eq!(p.grad.len(), grad.len(), "gradient length for {}", p.name);
        for (a, &g) in p.grad.iter_mut().zip(grad) {
            *a += g;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = R::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<R>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<R>> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}
