use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::data::Example;
use crate::boost::{KbConfig, KbParams, KbSystem};
use crate::error::{shape_err, Result};
use crate::gridnet::{GridConfig, GridNet};
use crate::numerics::{Graph, ParamStore, Var};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

/// Something the trainer can optimize: parameter stores plus a forward pass
/// from an example to the `[T, F, 2K]` output spectrum.
pub trait Trainable<T: Real> {
    fn stores(&self) -> Vec<&ParamStore<T>>;
    fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>>;
    /// Labels matching [`stores`](Self::stores), for logs.
    fn store_names(&self) -> Vec<&'static str>;
    fn output(&self, g: &mut Graph<T>, ex: &Example<T>) -> Result<Var>;
}

/// A single grid model trained alone (baselines and large-model pretraining).
#[derive(Debug, Clone)]
pub struct Baseline<T> {
    pub net: GridNet,
    pub params: ParamStore<T>,
}

impl<T: Real> Baseline<T> {
    pub fn new(cfg: GridConfig, bins: usize, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = GridNet::new(cfg, bins, &mut params, &mut rng::derive(seed, 1))?;
        Ok(Self { net, params })
    }
}

impl<T: Real> Trainable<T> for Baseline<T> {
    fn stores(&self) -> Vec<&ParamStore<T>> {
        vec![&self.params]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        vec![&mut self.params]
    }

    fn store_names(&self) -> Vec<&'static str> {
        vec!["model"]
    }

    fn output(&self, g: &mut Graph<T>, ex: &Example<T>) -> Result<Var> {
        let x = g.input(ex.input.clone());
        let e = match (self.net.has_speaker(), &ex.enrollment) {
            (true, Some(e)) => {
                let ev = g.input(e.clone());
                Some(self.net.speaker_embedding(&self.params, g, ev)?)
            }
            (true, None) => return Err(shape_err!("example {} has no enrollment", ex.id)),
            (false, _) => None,
        };
        self.net.forward(&self.params, g, x, e)
    }
}

/// Jointly trained large/small pair; the loss sees only the small output.
#[derive(Debug, Clone)]
pub struct Boosted<T> {
    pub sys: KbSystem,
    pub params: KbParams<T>,
}

impl<T: Real> Boosted<T> {
    pub fn new(cfg: KbConfig, bins: usize, seed: u64) -> Result<Self> {
        let (sys, params) = KbSystem::new(cfg, bins, seed)?;
        Ok(Self { sys, params })
    }

    /// Initializes the large model from pretrained weights with the same layout.
    pub fn load_large(&mut self, pretrained: &ParamStore<T>) -> Result<()> {
        let named: Vec<(String, Tensor<T>)> = pretrained.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        self.params.large.load_named(&named)
    }

    /// Frozen-large training: the large model gets no gradients and no updates.
    pub fn freeze_large(&mut self, frozen: bool) {
        self.params.large.set_trainable(!frozen);
    }
}

impl<T: Real> Trainable<T> for Boosted<T> {
    fn stores(&self) -> Vec<&ParamStore<T>> {
        self.params.stores().to_vec()
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        let [a, b, c] = self.params.stores_mut();
        vec![a, b, c]
    }

    fn store_names(&self) -> Vec<&'static str> {
        vec!["large", "small", "boost"]
    }

    fn output(&self, g: &mut Graph<T>, ex: &Example<T>) -> Result<Var> {
        let x = g.input(ex.input.clone());
        let e = ex.enrollment.as_ref().map(|e| g.input(e.clone()));
        Ok(self.sys.forward(&self.params, g, x, x, e)?.small)
    }
}
