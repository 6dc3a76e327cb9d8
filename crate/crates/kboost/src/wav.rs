//! Float32 WAV files.

use std::path::Path;

use kboost_core::dsp::AudioSignal;

use crate::error::{Error, Result};

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes interleaved 32-bit float samples.
pub fn write_wav(path: &Path, signal: &AudioSignal<f64>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: signal.num_channels() as u16,
        sample_rate: signal.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    for n in 0..signal.len() {
        for ch in signal.channels() {
            w.write_sample(ch[n] as f32).map_err(wav_err(path))?;
        }
    }
    w.finalize().map_err(wav_err(path))
}

/// Reads a float or integer PCM file into channels scaled to [-1, 1].
pub fn read_wav(path: &Path) -> Result<AudioSignal<f64>> {
    let mut r = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = r.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect::<Result<_, _>>()
        }
    }
    .map_err(wav_err(path))?;
    let mut out = vec![Vec::with_capacity(interleaved.len() / channels.max(1)); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, v) in frame.iter().enumerate() {
            out[c].push(*v);
        }
    }
    Ok(AudioSignal::new(out, spec.sample_rate)?)
}
