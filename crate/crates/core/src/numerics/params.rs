use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU32 = AtomicU32::new(1);

/// Handle to a parameter inside a specific [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    store: u32,
    index: u32,
}

impl ParamId {
    pub fn index(&self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters of one model (or one group of modules).
///
/// Stores are identified by a process-unique id so that gradients computed
/// on a graph mixing several stores can be routed back to their owners.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    id: u32,
    params: Vec<Parameter<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            trainable: true,
        });
        ParamId {
            store: self.id,
            index: (self.params.len() - 1) as u32,
        }
    }

    pub fn owns(&self, id: ParamId) -> bool {
        id.store == self.id
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        debug_assert!(self.owns(id), "parameter from store {} looked up in {}", id.store, self.id);
        &self.params[id.index()].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        debug_assert!(self.owns(id));
        &mut self.params[id.index()].value
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.index()]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(|i| ParamId {
            store: self.id,
            index: i as u32,
        })
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(|i| ParamId {
            store: self.id,
            index: i as u32,
        })
    }

    /// Number of scalars in parameters whose name passes `keep`, frozen or not.
    pub fn count_where(&self, keep: impl Fn(&str) -> bool) -> usize {
        self.params
            .iter()
            .filter(|p| keep(&p.name))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds the gradients that belong to this store.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.iter() {
            if id.store == self.id {
                self.params[id.index()].grad.add_assign(g);
            }
        }
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.grad.sum_sq().as_f64())
            .sum()
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.params {
            p.grad.scale(factor);
        }
    }

    /// Copy with converted element type and the same identity, so models
    /// built against this store can evaluate against the copy.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            id: self.id,
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }

    /// Overwrites values from `(name, tensor)` pairs; every parameter must be present.
    pub fn load_named(&mut self, values: &[(String, Tensor<T>)]) -> Result<()> {
        for p in &mut self.params {
            let (_, v) = values
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| shape_err!("missing parameter {}", p.name))?;
            if v.shape() != p.value.shape() {
                return Err(shape_err!(
                    "parameter {} has shape {:?}, stored {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                ));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Copies parameter values from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            p.value = q.value.clone();
        }
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    map: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn add(&mut self, id: ParamId, grad: Tensor<T>) {
        match self.map.get_mut(&id) {
            Some(g) => g.add_assign(&grad),
            None => {
                self.map.insert(id, grad);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor<T>)> {
        self.map.iter()
    }

    /// Squared norm over gradients belonging to `store`.
    pub fn norm_sq_for(&self, store: &ParamStore<T>) -> f64 {
        self.map
            .iter()
            .filter(|(id, _)| store.owns(**id))
            .map(|(_, g)| g.sum_sq().as_f64())
            .sum()
    }
}
