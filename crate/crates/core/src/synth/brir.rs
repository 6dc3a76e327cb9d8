use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::{self, uniform};

const BRIR_STREAM: u64 = 0xb717_0001;
/// Longest impulse response in samples.
pub const MAX_SUPPORT: usize = 4000;
/// Largest interaural delay in samples.
pub const MAX_ITD: i32 = 16;
const DIRECT_DELAY: usize = 8;
const PULSES_PER_SECOND: f64 = 1500.0;

/// Toy binaural room impulse response: a direct path with interaural time and
/// level differences followed by a sparse exponentially decaying tail
/// (velvet noise) drawn independently per ear.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBrir {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    /// Delay of the right ear relative to the left, samples.
    pub itd: i32,
    /// Amplitude decay rate of the tail, 1/s.
    pub decay: f64,
    pub seed: u64,
}

impl ToyBrir {
    pub fn generate(id: u32, sample_rate: u32) -> Self {
        let seed = id as u64;
        let mut r = rng::derive(BRIR_STREAM, seed);
        let sr = sample_rate as f64;
        let itd = r.gen_range(-MAX_ITD..=MAX_ITD);
        let ild_db = 6.0 * itd as f64 / MAX_ITD as f64 + uniform(&mut r, -1.0, 1.0);
        let rt60 = uniform(&mut r, 0.12, 0.4);
        let decay = libm::log(1000.0) / rt60;
        let drr_db = uniform(&mut r, 0.0, 10.0);
        let gap = (uniform(&mut r, 0.003, 0.012) * sr) as usize;
        let support = ((rt60 * sr) as usize + DIRECT_DELAY + gap).min(MAX_SUPPORT);

        let mut left = vec![0.0; support];
        let mut right = vec![0.0; support];
        // positive itd: the source is on the left, the right ear hears it later and quieter
        let (dl, dr) = (DIRECT_DELAY + (-itd).max(0) as usize, DIRECT_DELAY + itd.max(0) as usize);
        let far = libm::pow(10.0, -libm::fabs(ild_db) / 20.0);
        let (gl, gr) = if ild_db >= 0.0 { (1.0, far) } else { (far, 1.0) };
        left[dl] = gl;
        right[dr] = gr;

        let start = DIRECT_DELAY + MAX_ITD as usize + gap;
        let cell = (sr / PULSES_PER_SECOND).max(1.0) as usize;
        // tail energy relative to the direct path sets the direct-to-reverberant ratio
        let cells = support.saturating_sub(start) / cell;
        let decay_per_cell = libm::exp(-2.0 * decay * cell as f64 / sr);
        let geometric = if decay_per_cell < 1.0 { (1.0 - libm::pow(decay_per_cell, cells as f64)) / (1.0 - decay_per_cell) } else { cells as f64 };
        let a0 = libm::sqrt(libm::pow(10.0, -drr_db / 10.0) * (gl * gl + gr * gr) / (2.0 * geometric.max(1e-12)));
        for ear in [&mut left, &mut right] {
            for c in 0..cells {
                let pos = start + c * cell + r.gen_range(0..cell);
                if pos >= support {
                    break;
                }
                let t = (pos - start) as f64 / sr;
                let sign = if r.gen::<bool>() { 1.0 } else { -1.0 };
                ear[pos] += sign * a0 * libm::exp(-decay * t);
            }
        }

        let energy = (left.iter().chain(&right).map(|v| v * v).sum::<f64>() / 2.0).max(1e-300);
        let norm = 1.0 / libm::sqrt(energy);
        left.iter_mut().chain(right.iter_mut()).for_each(|v| *v *= norm);
        Self {
            left,
            right,
            itd,
            decay,
            seed,
        }
    }

    pub fn ear(&self, ch: usize) -> &[f64] {
        if ch == 0 {
            &self.left
        } else {
            &self.right
        }
    }

    /// Mean per-ear energy (1 after generation).
    pub fn energy(&self) -> f64 {
        self.left.iter().chain(&self.right).map(|v| v * v).sum::<f64>() / 2.0
    }
}

/// Causal convolution truncated to the input length, skipping zero taps.
pub fn convolve_sparse(x: &[f64], h: &[f64]) -> Vec<f64> {
    let taps: Vec<(usize, f64)> = h.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect();
    let mut out = vec![0.0; x.len()];
    for (k, hk) in taps {
        if k >= x.len() {
            break;
        }
        for (o, &xv) in out[k..].iter_mut().zip(x) {
            *o += hk * xv;
        }
    }
    out
}
