use serde::{Deserialize, Serialize};

use crate::boost::HEADER_LEN;
use crate::error::{config_err, Result};

/// Chunk duration of the shipped STFT settings.
pub const CHUNK_SECONDS: f64 = 0.008;

/// One-way communication delays between the local and the remote device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    /// Local to remote, seconds.
    pub c_out: f64,
    /// Remote to local, seconds.
    pub c_in: f64,
    /// Chunk duration, seconds.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_tau() -> f64 {
    CHUNK_SECONDS
}

/// Delays rounded into whole ticks; `uplink + downlink` is the total delay `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickDelays {
    pub uplink: usize,
    pub downlink: usize,
}

impl TickDelays {
    pub fn total(&self) -> usize {
        self.uplink + self.downlink
    }

    /// All of the delay on the return path.
    pub fn downlink_only(c: usize) -> Self {
        Self { uplink: 0, downlink: c }
    }
}

// durations are compared on a nanosecond grid so that 48 ms / 8 ms is 6, not 5.999..
fn nanos(seconds: f64) -> u64 {
    libm::round(seconds * 1e9) as u64
}

impl DelayConfig {
    pub fn from_ms(c_out_ms: f64, c_in_ms: f64) -> Self {
        Self {
            c_out: c_out_ms / 1e3,
            c_in: c_in_ms / 1e3,
            tau: CHUNK_SECONDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(config_err!("chunk duration must be positive, got {}", self.tau));
        }
        if !((self.c_out + self.c_in).is_finite() && self.c_out >= 0.0 && self.c_in >= 0.0) {
            return Err(config_err!("delays must be non-negative, got c_out={} c_in={}", self.c_out, self.c_in));
        }
        Ok(())
    }

    /// Total delay in chunks, `floor((c_in + c_out) / tau)`.
    pub fn chunks(&self) -> Result<usize> {
        self.validate()?;
        Ok(((nanos(self.c_in) + nanos(self.c_out)) / nanos(self.tau)) as usize)
    }

    /// Per-direction tick delays: the uplink gets `floor(c_out / tau)` and the
    /// downlink the remainder of `C`.
    pub fn ticks(&self) -> Result<TickDelays> {
        let c = self.chunks()?;
        let uplink = (nanos(self.c_out) / nanos(self.tau)) as usize;
        Ok(TickDelays {
            uplink,
            downlink: c - uplink,
        })
    }
}

/// Total delay in chunks for a delay configuration.
pub fn delay_to_chunks(config: &DelayConfig) -> Result<usize> {
    config.chunks()
}

/// Hint payload rate in bits per second, `(2K/P) * F * chunk_rate * bits`.
pub fn hint_throughput(k: usize, p: usize, bins: usize, chunk_rate: f64, bits_per_value: u32) -> Result<f64> {
    if p == 0 || (2 * k) % p != 0 {
        return Err(config_err!("2K = {} not divisible by compression {}", 2 * k, p));
    }
    Ok((2 * k / p) as f64 * bins as f64 * chunk_rate * bits_per_value as f64)
}

/// Wire header rate in bits per second for one hint message per chunk.
pub fn header_overhead(chunk_rate: f64) -> f64 {
    (HEADER_LEN * 8) as f64 * chunk_rate
}
