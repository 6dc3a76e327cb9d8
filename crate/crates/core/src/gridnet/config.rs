use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Hyperparameters of one TF-GridNet model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Embedding dimension per time-frequency unit.
    pub d: usize,
    /// Number of grid blocks.
    pub b: usize,
    /// Unfold kernel size (only 1 is supported).
    #[serde(default = "one")]
    pub i: usize,
    /// Unfold stride (only 1 is supported).
    #[serde(default = "one")]
    pub j: usize,
    /// LSTM hidden units (per direction on the frequency axis).
    pub h: usize,
    /// Attention heads.
    pub l: usize,
    #[serde(default)]
    pub attention: bool,
    /// Frames visible to each attention query, including its own.
    #[serde(default = "default_window")]
    pub attention_window: usize,
    /// Output channels.
    pub k: usize,
    /// Total query/key width across all bins; the per-bin width is `ceil(qk_dim / F)`.
    #[serde(default = "default_qk")]
    pub qk_dim: usize,
    /// Speaker embedding width for target speaker extraction.
    #[serde(default)]
    pub speaker_dim: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_window() -> usize {
    50
}

fn default_qk() -> usize {
    512
}

impl GridConfig {
    pub fn small(k: usize) -> Self {
        Self {
            d: 16,
            b: 3,
            i: 1,
            j: 1,
            h: 16,
            l: 4,
            attention: false,
            attention_window: 50,
            k,
            qk_dim: 512,
            speaker_dim: None,
        }
    }

    pub fn medium(k: usize) -> Self {
        Self {
            d: 26,
            h: 18,
            ..Self::small(k)
        }
    }

    pub fn large(k: usize) -> Self {
        Self {
            d: 64,
            h: 64,
            l: 8,
            attention: true,
            ..Self::small(k)
        }
    }

    pub fn with_speaker(mut self, dim: usize) -> Self {
        self.speaker_dim = Some(dim);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.l == 0 || self.k == 0 {
            return Err(config_err!("d, h, l and k must be positive: {:?}", self));
        }
        if self.b == 0 {
            return Err(config_err!("at least one grid block is required"));
        }
        if self.i != 1 || self.j != 1 {
            return Err(config_err!("only I = J = 1 is supported, got I={} J={}", self.i, self.j));
        }
        if self.attention {
            if self.attention_window == 0 {
                return Err(config_err!("attention window must be positive"));
            }
            if self.d % self.l != 0 {
                return Err(config_err!("d = {} not divisible by {} heads", self.d, self.l));
            }
            if self.qk_dim == 0 {
                return Err(config_err!("qk_dim must be positive"));
            }
        }
        if self.speaker_dim == Some(0) {
            return Err(config_err!("speaker embedding width must be positive"));
        }
        Ok(())
    }

    /// Per-bin query/key width of each attention head.
    pub fn head_qk(&self, bins: usize) -> usize {
        self.qk_dim.div_ceil(bins)
    }

    /// Number of trainable scalars, excluding the speaker network and its gate.
    pub fn param_count(&self, bins: usize) -> usize {
        let (d, h, k) = (self.d, self.h, self.k);
        let lstm = |input: usize| 4 * h * input + 4 * h * h + 4 * h;
        let freq = 2 * d + 2 * lstm(d) + d * 2 * h + d;
        let time = 2 * d + lstm(d) + d * h + d;
        let attn = if self.attention {
            let (l, e, dv) = (self.l, self.head_qk(bins), d / self.l);
            let qk = l * e * d + l * e + l + 2 * l * bins * e;
            let v = d * d + d + l + 2 * l * bins * dv;
            let proj = d * d + d + 1 + 2 * bins * d;
            2 * qk + v + proj
        } else {
            0
        };
        (4 * d + d) + self.b * (freq + time + attn) + (2 * k * d + 2 * k)
    }

    /// Multiply-accumulates per chunk of the streaming forward pass
    /// (dense, LSTM and attention terms; normalization ignored).
    pub fn macs_per_chunk(&self, bins: usize) -> u64 {
        let (d, h, k, f) = (self.d as u64, self.h as u64, self.k as u64, bins as u64);
        let lstm = |input: u64| 4 * h * (input + h);
        let freq = f * (2 * lstm(d) + d * 2 * h);
        let time = f * (lstm(d) + d * h);
        let attn = if self.attention {
            let (l, e, w) = (self.l as u64, self.head_qk(bins) as u64, self.attention_window as u64);
            let dv = d / l;
            let proj = f * (2 * d * l * e + 2 * d * d);
            proj + l * w * f * (e + dv)
        } else {
            0
        };
        f * 4 * d + self.b as u64 * (freq + time + attn) + f * d * 2 * k
    }
}
