use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{self, uniform};

const NOISE_STREAM: u64 = 0x0015_e001;

/// Ambient binaural noise of identity `id`: partially coherent colored noise
/// with slow level fluctuations. `seed` picks the segment.
pub fn binaural_noise(id: u32, seed: u64, len: usize, sample_rate: u32) -> [Vec<f64>; 2] {
    let mut p = rng::derive(NOISE_STREAM, id as u64);
    let coherence = uniform(&mut p, 0.2, 0.9);
    let pole = uniform(&mut p, 0.3, 0.97);
    let hum = uniform(&mut p, 40.0, 400.0);
    let hum_level = uniform(&mut p, 0.0, 0.3);
    let mod_rate = uniform(&mut p, 0.1, 2.0);
    let mod_depth = uniform(&mut p, 0.0, 0.5);

    let mut r = rng::derive(seed, id as u64);
    let sr = sample_rate as f64;
    let phase = uniform(&mut r, 0.0, core::f64::consts::TAU);
    let (a, b) = (libm::sqrt(coherence), libm::sqrt(1.0 - coherence));
    let mut out = [vec![0.0; len], vec![0.0; len]];
    let mut state = [0.0; 2];
    for n in 0..len {
        let t = n as f64 / sr;
        let common = rng::gaussian(&mut r);
        let level = 1.0 + mod_depth * libm::sin(core::f64::consts::TAU * mod_rate * t + phase);
        let tone = hum_level * libm::sin(core::f64::consts::TAU * hum * t + phase);
        for (ch, o) in out.iter_mut().enumerate() {
            let w = a * common + b * rng::gaussian(&mut r);
            state[ch] = pole * state[ch] + (1.0 - pole) * w;
            o[n] = level * (state[ch] + tone);
        }
    }
    out
}
