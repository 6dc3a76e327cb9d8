//! Knowledge boosting for low-latency streaming speech models.
//!
//! A small on-device model processes 8 ms audio chunks in real time while a
//! large remote model works on the same stream after a communication delay of
//! `C` chunks and sends compressed hint embeddings back. This crate holds the
//! allocation-only core: time-frequency processing, a reverse-mode autodiff
//! tape, the causal grid backbone, the merge machinery that consumes delayed
//! hints, a deterministic two-node streaming simulator, a toy binaural
//! mixture synthesizer and the joint training loop.
//!
//! File formats, configuration files and the command line live in the
//! companion `kboost` crate.

#![no_std]
extern crate alloc;

pub mod boost;
pub mod dsp;
pub mod error;
pub mod gridnet;
pub mod numerics;
pub mod real;
pub mod rng;
pub mod runtime;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
