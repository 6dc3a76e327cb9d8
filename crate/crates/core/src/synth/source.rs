use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{self, uniform};

const SPEAKER_STREAM: u64 = 0x5eac_0001;
const BLOCK: usize = 64;

/// Voice characteristics fixed per speaker identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0: f64,
    /// Spectral tilt in dB per octave (negative).
    pub tilt: f64,
    pub formants: [(f64, f64); 3],
}

impl Voice {
    pub fn of_speaker(speaker: u32) -> Self {
        let mut r = rng::derive(SPEAKER_STREAM, speaker as u64);
        let f0 = uniform(&mut r, 85.0, 255.0);
        let tilt = uniform(&mut r, -12.0, -6.0);
        let formants = [
            (uniform(&mut r, 300.0, 900.0), uniform(&mut r, 60.0, 120.0)),
            (uniform(&mut r, 900.0, 2500.0), uniform(&mut r, 80.0, 180.0)),
            (uniform(&mut r, 2300.0, 3500.0), uniform(&mut r, 120.0, 250.0)),
        ];
        Self { f0, tilt, formants }
    }

    fn gain(&self, freq: f64, shift: f64) -> f64 {
        let octaves = libm::log2(freq / self.f0).max(0.0);
        let mut g = libm::pow(10.0, self.tilt * octaves / 20.0);
        let mut res = 0.05;
        for &(fc, bw) in &self.formants {
            let d = (freq - fc * shift) / bw;
            res += 1.0 / (1.0 + d * d);
        }
        g *= res;
        g
    }
}

/// Speech-like dry signal: syllable bursts of a harmonic tone with a wandering
/// pitch contour, formant shaping and a little breath noise.
pub fn speech_like(speaker: u32, seed: u64, len: usize, sample_rate: u32) -> Vec<f64> {
    let voice = Voice::of_speaker(speaker);
    let mut r = rng::derive(seed, speaker as u64);
    let sr = sample_rate as f64;
    let nyq = 0.45 * sr;

    // syllable layout
    let mut env = vec![0.0; len];
    let mut pos = (uniform(&mut r, 0.0, 0.2) * sr) as usize;
    while pos < len {
        let dur = (uniform(&mut r, 0.12, 0.35) * sr) as usize;
        let amp = uniform(&mut r, 0.5, 1.0);
        for k in 0..dur.min(len - pos) {
            let w = libm::sin(core::f64::consts::PI * k as f64 / dur as f64);
            env[pos + k] = amp * w * w;
        }
        pos += dur + (uniform(&mut r, 0.03, 0.2) * sr) as usize;
    }

    let vib_rate = uniform(&mut r, 3.0, 6.0);
    let drift_rate = uniform(&mut r, 0.2, 0.7);
    let (ph_v, ph_d) = (uniform(&mut r, 0.0, 6.3), uniform(&mut r, 0.0, 6.3));
    let formant_rate = uniform(&mut r, 1.0, 4.0);
    let breath = uniform(&mut r, 0.01, 0.04);

    let mut out = vec![0.0; len];
    let mut phase = uniform(&mut r, 0.0, core::f64::consts::TAU);
    let mut gains: Vec<f64> = Vec::new();
    for start in (0..len).step_by(BLOCK) {
        let t = start as f64 / sr;
        let f0 = voice.f0
            * (1.0 + 0.03 * libm::sin(core::f64::consts::TAU * vib_rate * t + ph_v) + 0.12 * libm::sin(core::f64::consts::TAU * drift_rate * t + ph_d));
        let shift = 1.0 + 0.15 * libm::sin(core::f64::consts::TAU * formant_rate * t);
        let harmonics = ((nyq / f0) as usize).clamp(1, 48);
        gains.clear();
        gains.extend((1..=harmonics).map(|h| voice.gain(h as f64 * f0, shift)));
        let dphi = core::f64::consts::TAU * f0 / sr;
        for n in start..(start + BLOCK).min(len) {
            phase += dphi;
            if phase > core::f64::consts::TAU {
                phase -= core::f64::consts::TAU;
            }
            if env[n] == 0.0 {
                continue;
            }
            // sin(h phi) by the Chebyshev recurrence
            let (s1, c1) = (libm::sin(phase), libm::cos(phase));
            let (mut prev, mut cur) = (0.0, s1);
            let mut acc = 0.0;
            for &g in &gains {
                acc += g * cur;
                let next = 2.0 * c1 * cur - prev;
                prev = cur;
                cur = next;
            }
            out[n] = env[n] * (acc + breath * rng::gaussian(&mut r));
        }
    }
    out
}

/// Power of `x` (mean square).
pub(crate) fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

