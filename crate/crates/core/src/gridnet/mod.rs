//! Causal TF-GridNet backbone shared by the small and large models.

mod config;
mod model;

pub use config::GridConfig;
pub use model::{GridNet, GridState, INPUT_CHANNELS, SPEAKER_PREFIX};

pub(crate) use model::{add_in, apply_gate, dense_rows};

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;

use crate::dsp::{Spectrogram, StftConfig};
use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Features of frame `t`: `[F, 2C]` with real parts of every channel
/// followed by imaginary parts.
pub fn frame_features<T: Real>(spec: &Spectrogram<T>, t: usize) -> Vec<T> {
    let (c, f) = (spec.channels, spec.bins());
    let mut out = vec![T::zero(); f * 2 * c];
    for ch in 0..c {
        for (b, v) in spec.frame(ch, t).iter().enumerate() {
            out[b * 2 * c + ch] = v.re;
            out[b * 2 * c + c + ch] = v.im;
        }
    }
    out
}

/// Whole spectrogram as a `[T, F, 2C]` tensor (see [`frame_features`]).
pub fn spec_to_features<T: Real>(spec: &Spectrogram<T>) -> Tensor<T> {
    let mut data = Vec::with_capacity(spec.frames * spec.bins() * 2 * spec.channels);
    for t in 0..spec.frames {
        data.extend(frame_features(spec, t));
    }
    Tensor::from_vec(&[spec.frames, spec.bins(), 2 * spec.channels], data).expect("consistent shape")
}

/// Inverse of [`spec_to_features`].
pub fn features_to_spec<T: Real>(x: &Tensor<T>, config: StftConfig) -> Result<Spectrogram<T>> {
    let s = x.shape();
    if s.len() != 3 || s[1] != config.num_bins() || s[2] % 2 != 0 {
        return Err(shape_err!("features {:?} for {} bins", s, config.num_bins()));
    }
    let (frames, f, k) = (s[0], s[1], s[2] / 2);
    let mut spec = Spectrogram::zeros(k, frames, config);
    for t in 0..frames {
        for ch in 0..k {
            let frame = spec.frame_mut(ch, t);
            for b in 0..f {
                let base = (t * f + b) * 2 * k;
                frame[b] = Complex::new(x.data()[base + ch], x.data()[base + k + ch]);
            }
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests;
