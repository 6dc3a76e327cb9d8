//! Time-frequency conversion, chunk framing and signal-level metrics.

mod metrics;
mod signal;
mod stft;
mod window;

pub use metrics::{mean_si_sdr, si_sdr, si_sdr_parts, SI_SDR_CAP_DB};
pub(crate) use metrics::ratio_db;
pub use signal::{AudioChunk, AudioSignal, ChunkStream, SAMPLE_RATE};
pub use stft::{OverlapAdd, Spectrogram, Stft, StftConfig};
pub use window::sqrt_hann;
