use alloc::vec::Vec;

use crate::error::{config_err, shape_err, Result};
use crate::real::Real;

pub const SAMPLE_RATE: u32 = 16_000;

/// Multichannel time-domain audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal<T> {
    channels: Vec<Vec<T>>,
    sample_rate: u32,
}

impl<T: Real> AudioSignal<T> {
    pub fn new(channels: Vec<Vec<T>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(shape_err!("audio needs at least one channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(shape_err!("channels have different lengths"));
        }
        if sample_rate == 0 {
            return Err(config_err!("sample rate must be positive"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
        Self {
            channels: (0..channels).map(|_| alloc::vec![T::zero(); len]).collect(),
            sample_rate,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<T>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<T>> {
        self.channels
    }

    pub fn all_finite(&self) -> bool {
        self.channels.iter().flatten().all(|v| v.is_finite())
    }

    /// Copy of samples `[start, end)` on every channel.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c[start..end].to_vec()).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn cast<U: Real>(&self) -> AudioSignal<U> {
        AudioSignal {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| U::lit(v.as_f64())).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// One streaming input chunk: the samples needed to form STFT frame `index`.
///
/// Holds `window_len` samples per channel: `hop_len` new samples plus the
/// `window_len - hop_len` lookback shared with the previous chunk (chunk 0 is
/// entirely new audio).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioChunk<T> {
    pub index: usize,
    pub samples: Vec<Vec<T>>,
}

impl<T: Real> AudioChunk<T> {
    /// Sample index one past the last sample this chunk carries.
    pub fn end_sample(&self, hop_len: usize) -> usize {
        self.index * hop_len + self.samples[0].len()
    }
}

/// Gapless, strictly ordered chunking of a signal for uncentered framing.
#[derive(Debug, Clone)]
pub struct ChunkStream<'a, T> {
    signal: &'a AudioSignal<T>,
    window_len: usize,
    hop_len: usize,
    next: usize,
    count: usize,
}

impl<'a, T: Real> ChunkStream<'a, T> {
    pub fn new(signal: &'a AudioSignal<T>, window_len: usize, hop_len: usize) -> Self {
        let count = if signal.len() < window_len {
            0
        } else {
            (signal.len() - window_len) / hop_len + 1
        };
        Self {
            signal,
            window_len,
            hop_len,
            next: 0,
            count,
        }
    }

    pub fn num_chunks(&self) -> usize {
        self.count
    }
}

impl<T: Real> Iterator for ChunkStream<'_, T> {
    type Item = AudioChunk<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let start = self.next * self.hop_len;
        let samples = self
            .signal
            .channels()
            .iter()
            .map(|c| c[start..start + self.window_len].to_vec())
            .collect();
        let chunk = AudioChunk {
            index: self.next,
            samples,
        };
        self.next += 1;
        Some(chunk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_are_gapless_and_causal() {
        let sig = AudioSignal::new(
            alloc::vec![(0..1000).map(|v| v as f64).collect::<Vec<_>>()],
            SAMPLE_RATE,
        )
        .unwrap();
        let chunks: Vec<_> = ChunkStream::new(&sig, 192, 128).collect();
        assert_eq!(chunks.len(), (1000 - 192) / 128 + 1);
        for (i, c) in chunks.iter().enumerate() {
            assert_eq!(c.index, i);
            assert_eq!(c.samples[0][0], (i * 128) as f64);
            // never carries a sample past (i+1)*hop + (window-hop)
            assert!(c.end_sample(128) <= (i + 1) * 128 + 64);
        }
    }

    #[test]
    fn rejects_ragged_channels() {
        assert!(AudioSignal::new(alloc::vec![alloc::vec![0.0f32; 3], alloc::vec![0.0; 4]], 16000).is_err());
    }
}
