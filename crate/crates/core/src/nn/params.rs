use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Gradients, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    value: Arc<Tensor<T>>,
    trainable: bool,
}

/// Named model state: trainable weights plus non-trainable buffers such as
/// batch-norm running statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value: Arc::new(value),
            trainable,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Arc<Tensor<T>> {
        &self.entries[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Config(format!(
                "{}: shape {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = Arc::new(value);
        Ok(())
    }

    /// Ids in name order.
    pub fn ids_by_name(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.index.values().copied()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .map(ParamId)
            .filter(|&id| self.is_trainable(id))
            .collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }
}

/// Binds a [`ParamStore`] to a tape for one forward pass.
///
/// Each parameter becomes a leaf on first use. Batch-norm running-statistics
/// updates computed during the pass are collected for [`Binding::finish`].
pub struct Binding<'t, 's, T: Real> {
    pub tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    training: bool,
    grad: bool,
    vars: RefCell<Vec<Option<Var<'t, T>>>>,
    updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'t, 's, T: Real> Binding<'t, 's, T> {
    /// `training` selects batch statistics in normalization layers; `grad`
    /// makes trainable parameters differentiable leaves.
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, training: bool, grad: bool) -> Self {
        Binding {
            tape,
            store,
            training,
            grad,
            vars: RefCell::new(vec![None; store.len()]),
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.grad && self.store.is_trainable(id) {
            self.tape.leaf_shared(value)
        } else {
            self.tape.constant_shared(value)
        };
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    pub(crate) fn record_update(&self, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    /// Gradients of every trainable parameter touched by the pass.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                if !v.requires_grad() {
                    return None;
                }
                grads.get(v).map(|g| (ParamId(i), g.clone()))
            })
            .collect()
    }

    /// Buffer updates to apply once the pass is over.
    pub fn finish(self) -> Vec<(ParamId, Tensor<T>)> {
        self.updates.into_inner()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_index_and_shapes() {
        let mut s = ParamStore::<f32>::new();
        let b = s.add("b", Tensor::zeros(&[2]), true);
        let a = s.add("a", Tensor::zeros(&[3]), false);
        assert_eq!(s.id("a"), Some(a));
        assert_eq!(s.ids_by_name().collect::<Vec<_>>(), vec![a, b]);
        assert_eq!(s.num_trainable(), 2);
        assert!(s.set(a, Tensor::zeros(&[4])).is_err());
        assert!(s.set(a, Tensor::ones(&[3])).is_ok());
    }

    #[test]
    fn binding_reuses_leaves() {
        let mut s = ParamStore::<f64>::new();
        let w = s.add("w", Tensor::ones(&[2]), true);
        let tape = Tape::new();
        let bind = Binding::new(&tape, &s, true, true);
        let v1 = bind.var(w);
        let v2 = bind.var(w);
        assert_eq!(v1.id(), v2.id());
        let loss = v1.mul(v2).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        let grads = bind.gradients(&g);
        assert_eq!(grads[0].1.data(), &[2.0, 2.0]);
    }
}
