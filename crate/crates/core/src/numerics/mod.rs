//! Tensors with reverse-mode gradients and the operations the models use.

mod gradcheck;
mod graph;
pub mod kernels;
mod ops;
mod params;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, SeqLayout, Var};
pub use kernels::AttnMask;
pub use ops::{causal_conv1d, film, lstm_step, mha, mha_graph, LstmState, LstmWeights, MhaVars, MhaWeights};
pub use params::{Gradients, ParamId, ParamStore, Parameter};

#[allow(unused_imports)]
pub(crate) use graph::si_sdr_grad;

use rand::Rng;

use crate::real::Real;
use crate::rng;
use crate::tensor::{numel, Tensor};

/// Adds a parameter initialized uniformly in `±1/sqrt(fan_in)`.
pub fn add_uniform<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    shape: &[usize],
    fan_in: usize,
) -> ParamId {
    let data = rng::init_uniform(rng, numel(shape), fan_in);
    store.add(name, Tensor::from_vec(shape, data).expect("shape and data agree"))
}

/// Adds a constant-filled parameter.
pub fn add_const<T: Real>(store: &mut ParamStore<T>, name: &str, shape: &[usize], value: f64) -> ParamId {
    store.add(name, Tensor::full(shape, T::lit(value)))
}
