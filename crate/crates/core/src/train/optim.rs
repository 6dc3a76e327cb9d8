use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed list of parameter stores. Moments are kept in f64.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients. Frozen parameters
    /// are left untouched.
    pub fn step<T: Real>(&mut self, stores: &mut [&mut ParamStore<T>], lr: f64) {
        if self.m.is_empty() {
            for s in stores.iter() {
                let sizes: Vec<Vec<f64>> = s.params().iter().map(|p| alloc::vec![0.0; p.value.len()]).collect();
                self.m.push(sizes.clone());
                self.v.push(sizes);
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for (si, store) in stores.iter_mut().enumerate() {
            for (pi, p) in store.params_mut().iter_mut().enumerate() {
                if !p.trainable {
                    continue;
                }
                let (m, v) = (&mut self.m[si][pi], &mut self.v[si][pi]);
                let grad = p.grad.data().to_vec();
                for (k, (x, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                    let g = g.as_f64();
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                    let update = lr * (m[k] / bc1) / (libm::sqrt(v[k] / bc2) + eps);
                    *x = T::lit(x.as_f64() - update);
                }
            }
        }
    }
}

/// Global gradient norm over trainable parameters of all stores.
pub fn grad_norm<T: Real>(stores: &[&mut ParamStore<T>]) -> f64 {
    libm::sqrt(stores.iter().map(|s| s.grad_norm_sq()).sum::<f64>())
}

/// Rescales gradients so that their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(stores: &mut [&mut ParamStore<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(stores);
    if norm > max_norm && norm.is_finite() {
        let f = T::lit(max_norm / norm);
        for s in stores.iter_mut() {
            s.scale_grads(f);
        }
    }
    norm
}
