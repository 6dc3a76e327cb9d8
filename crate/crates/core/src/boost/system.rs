use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::compress::{CompressState, Compressor};
use super::merge::{ContextCache, MergeModule};
use crate::error::{config_err, shape_err, Result};
use crate::gridnet::{apply_gate, GridConfig, GridNet, GridState};
use crate::numerics::{AttnMask, Graph, ParamStore, Var};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

/// Context length used by the shipped configurations.
pub const DEFAULT_CONTEXT: usize = 49;

/// Everything that fixes the shape of a knowledge-boosting pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbConfig {
    pub small: GridConfig,
    pub large: GridConfig,
    /// Delay in chunks.
    pub c: usize,
    /// Compression ratio of the hint channels.
    pub p: usize,
    /// Context length of the merge attention.
    #[serde(default = "default_v")]
    pub v: usize,
    /// Merge attention heads; defaults to the small model's head count.
    #[serde(default)]
    pub merge_heads: Option<usize>,
}

fn default_v() -> usize {
    DEFAULT_CONTEXT
}

impl KbConfig {
    pub fn new(small: GridConfig, large: GridConfig, c: usize, p: usize) -> Self {
        Self {
            small,
            large,
            c,
            p,
            v: DEFAULT_CONTEXT,
            merge_heads: None,
        }
    }

    pub fn heads(&self) -> usize {
        self.merge_heads.unwrap_or(self.small.l)
    }

    /// Channels of one hint frame per bin.
    pub fn hint_channels(&self) -> usize {
        2 * self.large.k / self.p.max(1)
    }

    /// Scalars of the compression and merge modules.
    pub fn boost_param_count(&self) -> usize {
        let (d, h, e) = (self.small.d, self.hint_channels(), 2 * self.large.k);
        let compress = h * e * super::COMPRESS_KERNEL + h;
        let merge = 2 * d * h + 2 * d + 4 * d * d + 3 * d;
        compress + self.small.b.saturating_sub(1) * merge
    }

    /// Multiply-accumulates per chunk of the merge modules on the local side
    /// (keys and values of a context are projected once, when it arrives).
    pub fn merge_macs_per_chunk(&self, bins: usize) -> u64 {
        let (d, h, w) = (self.small.d as u64, self.hint_channels() as u64, self.v as u64 + 1);
        let per_bin = 2 * d * h + 4 * d * d + 2 * w * d;
        self.small.b.saturating_sub(1) as u64 * bins as u64 * per_bin
    }

    /// Multiply-accumulates per chunk of the compression on the remote side.
    pub fn compress_macs_per_chunk(&self, bins: usize) -> u64 {
        (bins * self.hint_channels() * 2 * self.large.k * super::COMPRESS_KERNEL) as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.small.validate()?;
        self.large.validate()?;
        if self.small.k != self.large.k {
            return Err(config_err!("small model has K={}, large K={}", self.small.k, self.large.k));
        }
        if self.p == 0 || (2 * self.large.k) % self.p != 0 {
            return Err(config_err!("2K = {} not divisible by compression {}", 2 * self.large.k, self.p));
        }
        if self.small.speaker_dim.is_some() != self.large.speaker_dim.is_some() {
            return Err(config_err!("both models must be conditioned on the speaker, or neither"));
        }
        if self.small.d % self.heads() != 0 {
            return Err(config_err!("merge heads {} do not divide D = {}", self.heads(), self.small.d));
        }
        Ok(())
    }
}

/// Parameter stores of a boosted pair: large model, small model, and the
/// boosting modules (compression and merges).
#[derive(Debug, Clone)]
pub struct KbParams<T> {
    pub large: ParamStore<T>,
    pub small: ParamStore<T>,
    pub boost: ParamStore<T>,
}

impl<T: Real> KbParams<T> {
    pub fn cast<U: Real>(&self) -> KbParams<U> {
        KbParams {
            large: self.large.cast(),
            small: self.small.cast(),
            boost: self.boost.cast(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.large.zero_grad();
        self.small.zero_grad();
        self.boost.zero_grad();
    }

    pub fn stores(&self) -> [&ParamStore<T>; 3] {
        [&self.large, &self.small, &self.boost]
    }

    pub fn stores_mut(&mut self) -> [&mut ParamStore<T>; 3] {
        [&mut self.large, &mut self.small, &mut self.boost]
    }
}

/// Tape nodes produced by [`KbSystem::forward`].
#[derive(Debug, Clone, Copy)]
pub struct KbOutputs {
    /// Small model output `[T, F, 2K]`.
    pub small: Var,
    /// Large model output `[T, F, 2K]` (the extracted embedding before compression).
    pub large: Var,
    /// Compressed hints before the delay shift `[T, F, 2K/P]`.
    pub hints: Var,
}

/// A large model whose compressed outputs boost a small model through
/// merge modules placed between the small model's grid blocks.
#[derive(Debug, Clone)]
pub struct KbSystem {
    cfg: KbConfig,
    bins: usize,
    pub large: GridNet,
    pub small: GridNet,
    pub compressor: Compressor,
    pub merges: Vec<MergeModule>,
    leak: bool,
}

impl KbSystem {
    pub fn new<T: Real>(cfg: KbConfig, bins: usize, seed: u64) -> Result<(Self, KbParams<T>)> {
        cfg.validate()?;
        let mut params = KbParams {
            large: ParamStore::new(),
            small: ParamStore::new(),
            boost: ParamStore::new(),
        };
        let large = GridNet::new(cfg.large, bins, &mut params.large, &mut rng::derive(seed, 1))?;
        let small = GridNet::new(cfg.small, bins, &mut params.small, &mut rng::derive(seed, 2))?;
        let mut r = rng::derive(seed, 3);
        let compressor = Compressor::new(2 * cfg.large.k, cfg.p, &mut params.boost, &mut r)?;
        let merges = (0..cfg.small.b.saturating_sub(1))
            .map(|j| MergeModule::new(&format!("merge{j}"), cfg.small.d, cfg.hint_channels(), cfg.heads(), &mut params.boost, &mut r))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Self {
                cfg,
                bins,
                large,
                small,
                compressor,
                merges,
                leak: false,
            },
            params,
        ))
    }

    pub fn config(&self) -> &KbConfig {
        &self.cfg
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Fault injection for causality audits: the offline merge attention
    /// loses its mask and every position reads every chunk's context.
    pub fn inject_future_leak(&mut self, leak: bool) {
        self.leak = leak;
    }

    /// Offline joint forward pass. `x_small` and `x_large` are the `[T, F, 4]`
    /// inputs seen by each model (normally the same node); `enrollment` is the
    /// `[T_e, F, 4]` enrollment input for speaker-conditioned models.
    pub fn forward<T: Real>(
        &self,
        p: &KbParams<T>,
        g: &mut Graph<T>,
        x_small: Var,
        x_large: Var,
        enrollment: Option<Var>,
    ) -> Result<KbOutputs> {
        let speaker = |net: &GridNet, s: &ParamStore<T>, g: &mut Graph<T>| -> Result<Option<Var>> {
            match (net.has_speaker(), enrollment) {
                (false, _) => Ok(None),
                (true, Some(e)) => net.speaker_embedding(s, g, e).map(Some),
                (true, None) => Err(shape_err!("speaker-conditioned model needs an enrollment input")),
            }
        };
        let e_large = speaker(&self.large, &p.large, g)?;
        let large = self.large.forward(&p.large, g, x_large, e_large)?;
        let hints = self.compressor.forward(&p.boost, g, large)?;
        let shifted = g.shift_time(hints, self.cfg.c)?;

        let e_small = speaker(&self.small, &p.small, g)?;
        let mut z = self.small.encode(&p.small, g, x_small)?;
        if let Some(e) = e_small {
            z = self.small.condition(&p.small, g, z, e)?;
        }
        for j in 0..self.small.num_blocks() {
            z = self.small.block(&p.small, g, j, z)?;
            if let Some(m) = self.merges.get(j) {
                z = if self.leak {
                    m.forward_masked(&p.boost, g, z, shifted, self.cfg.c, AttnMask::Full)?
                } else {
                    m.forward(&p.boost, g, z, shifted, self.cfg.c, self.cfg.v)?
                };
            }
        }
        let small = self.small.decode(&p.small, g, z)?;
        Ok(KbOutputs { small, large, hints })
    }

    /// Offline inference without gradient bookkeeping beyond the tape:
    /// `[T, F, 4]` inputs to the small model's `[T, F, 2K]` output.
    pub fn infer<T: Real>(
        &self,
        p: &KbParams<T>,
        x_small: &Tensor<T>,
        x_large: &Tensor<T>,
        enrollment: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xs = g.input(x_small.clone());
        let xl = g.input(x_large.clone());
        let e = enrollment.map(|e| g.input(e.clone()));
        let out = self.forward(p, &mut g, xs, xl, e)?;
        Ok(g.value(out.small).clone())
    }

    /// Streaming state of the large (remote) side.
    pub fn large_stream<T: Real>(&self, p: &KbParams<T>, enrollment: Option<&Tensor<T>>) -> Result<LargeStream<T>> {
        Ok(LargeStream {
            state: self.large.new_state(),
            compress: self.compressor.new_state(),
            gate: gate_for(&self.large, &p.large, enrollment)?,
            chunk: 0,
        })
    }

    /// Streaming state of the small (local) side.
    pub fn small_stream<T: Real>(&self, p: &KbParams<T>, enrollment: Option<&Tensor<T>>) -> Result<SmallStream<T>> {
        Ok(SmallStream {
            state: self.small.new_state(),
            caches: self.merges.iter().map(|m| m.new_cache(self.cfg.c, self.cfg.v)).collect(),
            gate: gate_for(&self.small, &p.small, enrollment)?,
            chunk: 0,
        })
    }
}

fn gate_for<T: Real>(net: &GridNet, s: &ParamStore<T>, enrollment: Option<&Tensor<T>>) -> Result<Option<Vec<T>>> {
    match (net.has_speaker(), enrollment) {
        (false, _) => Ok(None),
        (true, Some(e)) => net.enrollment_gate(s, e).map(Some),
        (true, None) => Err(shape_err!("speaker-conditioned model needs an enrollment input")),
    }
}

/// Remote side: large model plus compression, one chunk at a time.
#[derive(Debug, Clone)]
pub struct LargeStream<T> {
    state: GridState<T>,
    compress: CompressState<T>,
    gate: Option<Vec<T>>,
    chunk: usize,
}

impl<T: Real> LargeStream<T> {
    /// Processes input frame `[F, 4]` and returns the hint `[F, 2K/P]`.
    pub fn step(&mut self, sys: &KbSystem, p: &KbParams<T>, frame: &[T]) -> Vec<T> {
        let out = sys.large.step(&p.large, &mut self.state, frame, self.gate.as_deref());
        self.chunk += 1;
        sys.compressor.step(&p.boost, &mut self.compress, &out)
    }

    pub fn chunks_processed(&self) -> usize {
        self.chunk
    }
}

/// Local side: small model with merge modules and their context caches.
#[derive(Debug, Clone)]
pub struct SmallStream<T> {
    state: GridState<T>,
    caches: Vec<ContextCache<T>>,
    gate: Option<Vec<T>>,
    chunk: usize,
}

impl<T: Real> SmallStream<T> {
    /// Processes input frame `[F, 4]` for chunk `i` together with the hint of
    /// chunk `i - C` (absent while `i < C`) and returns the output frame `[F, 2K]`.
    pub fn step(&mut self, sys: &KbSystem, p: &KbParams<T>, frame: &[T], hint: Option<&[T]>) -> Result<Vec<T>> {
        if let Some(h) = hint {
            if h.len() != sys.bins * sys.cfg.hint_channels() {
                return Err(shape_err!("hint has {} values, expected {}", h.len(), sys.bins * sys.cfg.hint_channels()));
            }
        }
        let net = &sys.small;
        let mut z = net.encode_frame(&p.small, frame);
        if let Some(gate) = &self.gate {
            apply_gate(&mut z, gate);
        }
        for j in 0..net.num_blocks() {
            net.block_frame(&p.small, j, &mut self.state, &mut z);
            if let Some(m) = sys.merges.get(j) {
                m.step(&p.boost, &mut self.caches[j], &mut z, hint)?;
            }
        }
        self.chunk += 1;
        Ok(net.decode_frame(&p.small, &z))
    }

    pub fn caches(&self) -> &[ContextCache<T>] {
        &self.caches
    }

    pub fn chunks_processed(&self) -> usize {
        self.chunk
    }
}
