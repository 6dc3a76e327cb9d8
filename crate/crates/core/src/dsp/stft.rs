use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::signal::AudioSignal;
use super::window::sqrt_hann;
use crate::error::{config_err, Error, Result};
use crate::real::Real;

/// Framing parameters in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop_len: usize,
}

impl StftConfig {
    /// 12 ms windows with an 8 ms hop at 16 kHz.
    pub const DEFAULT: StftConfig = StftConfig {
        window_len: 192,
        hop_len: 128,
    };

    pub fn from_ms(window_ms: f64, hop_ms: f64, sample_rate: u32) -> Result<Self> {
        let window_len = libm::round(window_ms * sample_rate as f64 / 1000.0) as usize;
        let hop_len = libm::round(hop_ms * sample_rate as f64 / 1000.0) as usize;
        let cfg = Self { window_len, hop_len };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_len == 0 || self.window_len == 0 {
            return Err(config_err!("window and hop must be positive"));
        }
        if self.window_len < self.hop_len {
            return Err(config_err!(
                "window {} shorter than hop {}",
                self.window_len,
                self.hop_len
            ));
        }
        if self.window_len % 2 != 0 {
            return Err(config_err!("window length must be even"));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Frames produced by uncentered framing of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop_len + 1
        }
    }

    /// Length of the overlap-add output for `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_len + self.window_len
        }
    }

    /// Samples excluded from warm-up and tail: `[window - hop, frames * hop)`.
    /// Every sample here is covered by the steady-state frame pattern.
    pub fn interior(&self, frames: usize) -> Range<usize> {
        (self.window_len - self.hop_len)..(frames * self.hop_len)
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Complex spectrogram stored as `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub values: Vec<Complex<T>>,
    pub channels: usize,
    pub frames: usize,
    pub config: StftConfig,
}

impl<T: Real> Spectrogram<T> {
    pub fn zeros(channels: usize, frames: usize, config: StftConfig) -> Self {
        Self {
            values: vec![Complex::new(T::zero(), T::zero()); channels * frames * config.num_bins()],
            channels,
            frames,
            config,
        }
    }

    pub fn bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn frame(&self, channel: usize, t: usize) -> &[Complex<T>] {
        let f = self.bins();
        let start = (channel * self.frames + t) * f;
        &self.values[start..start + f]
    }

    pub fn frame_mut(&mut self, channel: usize, t: usize) -> &mut [Complex<T>] {
        let f = self.bins();
        let start = (channel * self.frames + t) * f;
        &mut self.values[start..start + f]
    }
}

/// Windowed real DFT analysis and overlap-add synthesis for one framing.
#[derive(Debug, Clone)]
pub struct Stft<T> {
    config: StftConfig,
    window: Vec<T>,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> Stft<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let n = config.window_len;
        let (cos, sin) = (0..n)
            .map(|k| {
                let phase = core::f64::consts::TAU * k as f64 / n as f64;
                (T::lit(libm::cos(phase)), T::lit(libm::sin(phase)))
            })
            .unzip();
        Ok(Self {
            config,
            window: sqrt_hann(n),
            cos,
            sin,
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// DFT of one windowed frame of `window_len` samples.
    pub fn analyze_frame(&self, frame: &[T], out: &mut [Complex<T>]) {
        let n = self.config.window_len;
        debug_assert_eq!(frame.len(), n);
        let mut windowed = vec![T::zero(); n];
        for i in 0..n {
            windowed[i] = frame[i] * self.window[i];
        }
        for (k, bin) in out.iter_mut().enumerate() {
            let (mut re, mut im) = (T::zero(), T::zero());
            let mut idx = 0usize;
            for &x in &windowed {
                re += x * self.cos[idx];
                im -= x * self.sin[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            *bin = Complex::new(re, im);
        }
    }

    /// Inverse real DFT of one frame followed by the synthesis window.
    /// Imaginary parts of the DC and Nyquist bins are ignored.
    pub fn synthesize_frame(&self, bins: &[Complex<T>], out: &mut [T]) {
        let n = self.config.window_len;
        let f = self.config.num_bins();
        let inv_n = T::one() / T::from_usize(n);
        let two = T::lit(2.0);
        for (m, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = bins[0].re;
            let mut idx = m;
            for b in &bins[1..f - 1] {
                acc += two * (b.re * self.cos[idx] - b.im * self.sin[idx]);
                idx += m;
                if idx >= n {
                    idx -= n;
                }
            }
            // Nyquist bin: cos(pi m) = +-1
            let nyq = bins[f - 1].re;
            acc += if m % 2 == 0 { nyq } else { -nyq };
            *o = acc * inv_n * self.window[m];
        }
    }

    /// Gradient of `synthesize_frame` with respect to its bins, given the
    /// gradient `grad_out` of the windowed time frame. Writes real and
    /// imaginary parts separately.
    pub fn synthesize_frame_adjoint(&self, grad_out: &[T], grad_re: &mut [T], grad_im: &mut [T]) {
        let n = self.config.window_len;
        let f = self.config.num_bins();
        let inv_n = T::one() / T::from_usize(n);
        let g: Vec<T> = (0..n).map(|m| grad_out[m] * self.window[m] * inv_n).collect();
        for k in 0..f {
            let scale = if k == 0 || k == f - 1 { T::one() } else { T::lit(2.0) };
            let (mut re, mut im) = (T::zero(), T::zero());
            let mut idx = 0usize;
            for &gm in &g {
                re += gm * self.cos[idx];
                im -= gm * self.sin[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            if k == 0 || k == f - 1 {
                im = T::zero();
            }
            grad_re[k] = re * scale;
            grad_im[k] = im * scale;
        }
    }

    /// Sum of squared window values covering sample `n` from frames `0..=last_frame`.
    pub fn envelope_at(&self, n: usize, last_frame: usize) -> T {
        let (win, hop) = (self.config.window_len, self.config.hop_len);
        let first = if n + 1 > win { (n + 1 - win + hop - 1) / hop } else { 0 };
        let mut acc = T::zero();
        let mut t = first;
        while t <= last_frame && t * hop <= n {
            let w = self.window[n - t * hop];
            acc += w * w;
            t += 1;
        }
        acc
    }

    /// Normalizes an accumulated overlap-add sample by its window envelope.
    #[inline]
    pub fn normalize(&self, acc: T, n: usize, last_frame: usize) -> T {
        let env = self.envelope_at(n, last_frame);
        if env > T::lit(1e-10) {
            acc / env
        } else {
            T::zero()
        }
    }

    /// Uncentered STFT of every channel.
    pub fn stft(&self, signal: &AudioSignal<T>) -> Result<Spectrogram<T>> {
        let (win, hop) = (self.config.window_len, self.config.hop_len);
        if signal.len() < win {
            return Err(Error::TooShort {
                len: signal.len(),
                needed: win,
            });
        }
        let frames = self.config.num_frames(signal.len());
        let mut spec = Spectrogram::zeros(signal.num_channels(), frames, self.config);
        for c in 0..signal.num_channels() {
            let x = signal.channel(c);
            for t in 0..frames {
                let start = t * hop;
                self.analyze_frame(&x[start..start + win], spec.frame_mut(c, t));
            }
        }
        Ok(spec)
    }

    /// Weighted overlap-add inverse. Output length is `(frames-1)*hop + window`.
    pub fn istft(&self, spec: &Spectrogram<T>) -> Result<AudioSignal<T>> {
        if spec.config != self.config {
            return Err(config_err!(
                "spectrogram framed with {:?}, synthesizer uses {:?}",
                spec.config,
                self.config
            ));
        }
        let frames: Vec<Vec<Vec<Complex<T>>>> = (0..spec.channels)
            .map(|c| (0..spec.frames).map(|t| spec.frame(c, t).to_vec()).collect())
            .collect();
        let channels = frames.iter().map(|ch| self.overlap_add(ch)).collect();
        AudioSignal::new(channels, super::SAMPLE_RATE)
    }

    /// Overlap-add of a sequence of frames for one channel.
    pub fn overlap_add(&self, frames: &[Vec<Complex<T>>]) -> Vec<T> {
        let mut ola = OverlapAdd::new(self.clone());
        let mut out = Vec::with_capacity(self.config.output_len(frames.len()));
        for f in frames {
            out.extend_from_slice(&ola.push(f));
        }
        out.extend_from_slice(&ola.flush());
        out
    }
}

/// Streaming overlap-add: each pushed frame finalizes `hop_len` samples.
#[derive(Debug, Clone)]
pub struct OverlapAdd<T> {
    stft: Stft<T>,
    acc: Vec<T>,
    frames_seen: usize,
    scratch: Vec<T>,
}

impl<T: Real> OverlapAdd<T> {
    pub fn new(stft: Stft<T>) -> Self {
        let n = stft.config.window_len;
        Self {
            stft,
            acc: vec![T::zero(); n],
            frames_seen: 0,
            scratch: vec![T::zero(); n],
        }
    }

    /// Adds frame `frames_seen` and returns the `hop_len` samples it completes.
    pub fn push(&mut self, bins: &[Complex<T>]) -> Vec<T> {
        let (win, hop) = (self.stft.config.window_len, self.stft.config.hop_len);
        self.stft.synthesize_frame(bins, &mut self.scratch);
        for (a, &s) in self.acc.iter_mut().zip(&self.scratch) {
            *a += s;
        }
        let t = self.frames_seen;
        let base = t * hop;
        let out: Vec<T> = (0..hop)
            .map(|m| self.stft.normalize(self.acc[m], base + m, t))
            .collect();
        self.acc.copy_within(hop..win, 0);
        for a in &mut self.acc[win - hop..] {
            *a = T::zero();
        }
        self.frames_seen += 1;
        out
    }

    /// Remaining `window - hop` tail samples after the last frame.
    pub fn flush(&mut self) -> Vec<T> {
        let (win, hop) = (self.stft.config.window_len, self.stft.config.hop_len);
        if self.frames_seen == 0 {
            return Vec::new();
        }
        let last = self.frames_seen - 1;
        let base = self.frames_seen * hop;
        (0..win - hop)
            .map(|m| self.stft.normalize(self.acc[m], base + m, last))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn noise(len: usize, seed: u64) -> AudioSignal<f64> {
        let mut r = rng::seeded(seed);
        AudioSignal::new(
            alloc::vec![
                (0..len).map(|_| rng::gaussian(&mut r)).collect(),
                (0..len).map(|_| rng::gaussian(&mut r)).collect(),
            ],
            16000,
        )
        .unwrap()
    }

    #[test]
    fn framing_counts() {
        let cfg = StftConfig::DEFAULT;
        assert_eq!(cfg.num_frames(16000), 124);
        assert_eq!(cfg.num_frames(80000), 624);
        assert_eq!(cfg.num_bins(), 97);
        assert_eq!(cfg, StftConfig::from_ms(12.0, 8.0, 16000).unwrap());
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let stft = Stft::<f64>::new(StftConfig::DEFAULT).unwrap();
        let spec = stft.stft(&AudioSignal::zeros(2, 16000, 16000)).unwrap();
        assert_eq!(spec.frames, 124);
        assert!(spec.values.iter().all(|c| c.re == 0.0 && c.im == 0.0));
        let back = stft.istft(&spec).unwrap();
        assert!(back.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_rejected() {
        let stft = Stft::<f32>::new(StftConfig::DEFAULT).unwrap();
        let err = stft.stft(&AudioSignal::zeros(1, 100, 16000)).unwrap_err();
        assert_eq!(err, Error::TooShort { len: 100, needed: 192 });
    }

    #[test]
    fn impulse_spectrum_matches_direct_dft_of_window() {
        let cfg = StftConfig::DEFAULT;
        let stft = Stft::<f64>::new(cfg).unwrap();
        let mut x = alloc::vec![0.0; 1000];
        x[0] = 1.0;
        let spec = stft.stft(&AudioSignal::new(alloc::vec![x], 16000).unwrap()).unwrap();
        // direct DFT oracle: X_k = w[0] * e^0 = w[0] for every k
        let w = sqrt_hann::<f64>(192);
        for (k, v) in spec.frame(0, 0).iter().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            let mut imp = alloc::vec![0.0; 192];
            imp[0] = 1.0;
            for n in 0..192 {
                let ph = -core::f64::consts::TAU * (k * n) as f64 / 192.0;
                re += imp[n] * w[n] * libm::cos(ph);
                im += imp[n] * w[n] * libm::sin(ph);
            }
            assert!((v.re - re).abs() < 1e-12 && (v.im - im).abs() < 1e-12);
        }
        for t in 1..spec.frames {
            assert!(spec.frame(0, t).iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn round_trip_interior() {
        let cfg = StftConfig::DEFAULT;
        let stft = Stft::<f64>::new(cfg).unwrap();
        let x = noise(4000, 3);
        let y = stft.istft(&stft.stft(&x).unwrap()).unwrap();
        let frames = cfg.num_frames(4000);
        let range = cfg.interior(frames);
        for c in 0..2 {
            let peak = x.channel(c)[range.clone()].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for n in range.clone() {
                assert!((y.channel(c)[n] - x.channel(c)[n]).abs() / peak < 1e-9);
            }
        }
    }

    #[test]
    fn single_frame_is_local() {
        let cfg = StftConfig::DEFAULT;
        let stft = Stft::<f64>::new(cfg).unwrap();
        let mut spec = Spectrogram::zeros(1, 10, cfg);
        for (k, b) in spec.frame_mut(0, 4).iter_mut().enumerate() {
            *b = Complex::new(1.0 + k as f64, 0.5);
        }
        let y = stft.istft(&spec).unwrap();
        for (n, v) in y.channel(0).iter().enumerate() {
            if !(4 * 128..4 * 128 + 192).contains(&n) {
                assert_eq!(*v, 0.0, "sample {n}");
            }
        }
    }

    #[test]
    fn mismatched_config_rejected() {
        let stft = Stft::<f64>::new(StftConfig::DEFAULT).unwrap();
        let spec = Spectrogram::zeros(1, 3, StftConfig { window_len: 256, hop_len: 128 });
        assert!(matches!(stft.istft(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let cfg = StftConfig { window_len: 16, hop_len: 8 };
        let stft = Stft::<f64>::new(cfg).unwrap();
        let mut r = rng::seeded(9);
        let bins: Vec<Complex<f64>> = (0..9)
            .map(|_| Complex::new(rng::gaussian(&mut r), rng::gaussian(&mut r)))
            .collect();
        let g: Vec<f64> = (0..16).map(|_| rng::gaussian(&mut r)).collect();
        let objective = |b: &[Complex<f64>]| {
            let mut out = alloc::vec![0.0; 16];
            stft.synthesize_frame(b, &mut out);
            out.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut gre = alloc::vec![0.0; 9];
        let mut gim = alloc::vec![0.0; 9];
        stft.synthesize_frame_adjoint(&g, &mut gre, &mut gim);
        for k in 0..9 {
            let mut p = bins.clone();
            p[k].re += 1e-6;
            let mut m = bins.clone();
            m[k].re -= 1e-6;
            let fd = (objective(&p) - objective(&m)) / 2e-6;
            assert!((fd - gre[k]).abs() < 1e-7);
            let mut p = bins.clone();
            p[k].im += 1e-6;
            let mut m = bins.clone();
            m[k].im -= 1e-6;
            let fd = (objective(&p) - objective(&m)) / 2e-6;
            assert!((fd - gim[k]).abs() < 1e-7);
        }
    }
}
