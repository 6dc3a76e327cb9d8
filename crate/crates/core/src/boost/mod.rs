//! Hint extraction and compression on the large side; delay shifting,
//! FiLM contextualization and cross-attention merging on the small side.

mod compress;
mod merge;
mod system;
mod wire;

pub use compress::{CompressState, Compressor, COMPRESS_KERNEL};
pub use merge::{ContextCache, MergeModule};
pub use system::{KbConfig, KbOutputs, KbParams, KbSystem, LargeStream, SmallStream, DEFAULT_CONTEXT};
pub use wire::{HintEmbedding, HEADER_LEN};

use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::{Spectrogram, StftConfig};
use crate::error::Result;
use crate::gridnet::{features_to_spec, spec_to_features};
use crate::real::Real;
use crate::tensor::Tensor;

/// Real parts then imaginary parts of every output channel: `[T, F, 2K]`.
pub fn extract_embedding<T: Real>(output: &Spectrogram<T>) -> Tensor<T> {
    spec_to_features(output)
}

/// Inverse of [`extract_embedding`].
pub fn embedding_to_spec<T: Real>(e: &Tensor<T>, config: StftConfig) -> Result<Spectrogram<T>> {
    features_to_spec(e, config)
}

/// Delays a sequence by `c` positions, filling the start with zero frames of
/// the same size: position `i` holds element `i - c`.
pub fn shift_embeddings<T: Real>(seq: &[Vec<T>], c: usize) -> Vec<Vec<T>> {
    let width = seq.first().map_or(0, |v| v.len());
    (0..seq.len())
        .map(|i| if i < c { vec![T::zero(); width] } else { seq[i - c].clone() })
        .collect()
}
