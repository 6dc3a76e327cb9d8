use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::numerics::{add_uniform, Graph, ParamId, ParamStore, Var};
use crate::real::Real;
use crate::rng::SeededRng;

pub const COMPRESS_KERNEL: usize = 3;

/// Causal convolution over time from `2K` to `2K/P` channels, shared across bins.
#[derive(Debug, Clone)]
pub struct Compressor {
    w: ParamId,
    b: ParamId,
    in_ch: usize,
    out_ch: usize,
}

impl Compressor {
    pub fn new<T: Real>(in_ch: usize, ratio: usize, store: &mut ParamStore<T>, rng: &mut SeededRng) -> Result<Self> {
        if ratio == 0 || in_ch % ratio != 0 {
            return Err(config_err!("{} embedding channels not divisible by compression {}", in_ch, ratio));
        }
        let out_ch = in_ch / ratio;
        let fan_in = in_ch * COMPRESS_KERNEL;
        Ok(Self {
            w: add_uniform(store, rng, "compress.w", &[out_ch, in_ch, COMPRESS_KERNEL], fan_in),
            b: add_uniform(store, rng, "compress.b", &[out_ch], fan_in),
            in_ch,
            out_ch,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    /// Sets the kernel to pass channel `c` of the current frame to output `c`
    /// (meaningful for ratio 1) and zeroes the bias.
    pub fn set_identity<T: Real>(&self, store: &mut ParamStore<T>) {
        let w = store.get_mut(self.w);
        w.fill(T::zero());
        for c in 0..self.out_ch.min(self.in_ch) {
            w.data_mut()[(c * self.in_ch + c) * COMPRESS_KERNEL + COMPRESS_KERNEL - 1] = T::one();
        }
        store.get_mut(self.b).fill(T::zero());
    }

    /// `[T, F, 2K]` → `[T, F, 2K/P]`
    pub fn forward<T: Real>(&self, s: &ParamStore<T>, g: &mut Graph<T>, e: Var) -> Result<Var> {
        let (w, b) = (g.param(s, self.w), g.param(s, self.b));
        g.causal_conv(e, w, b)
    }

    pub fn new_state<T: Real>(&self) -> CompressState<T> {
        CompressState { past: VecDeque::new() }
    }

    /// One frame `[F, 2K]` → `[F, 2K/P]`, keeping the last `k-1` inputs.
    pub fn step<T: Real>(&self, s: &ParamStore<T>, state: &mut CompressState<T>, frame: &[T]) -> Vec<T> {
        let (cin, cout, k) = (self.in_ch, self.out_ch, COMPRESS_KERNEL);
        let bins = frame.len() / cin;
        state.past.push_back(frame.to_vec());
        while state.past.len() > k {
            state.past.pop_front();
        }
        let w = s.get(self.w).data();
        let b = s.get(self.b).data();
        let mut out = vec![T::zero(); bins * cout];
        let avail = state.past.len();
        // same accumulation order as the offline convolution: taps oldest to newest
        for f in 0..bins {
            for o in 0..cout {
                let mut acc = b[o];
                for j in 0..k {
                    let back = k - 1 - j;
                    if back >= avail {
                        continue;
                    }
                    let x = &state.past[avail - 1 - back];
                    for c in 0..cin {
                        acc += w[(o * cin + c) * k + j] * x[f * cin + c];
                    }
                }
                out[f * cout + o] = acc;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CompressState<T> {
    past: VecDeque<Vec<T>>,
}
