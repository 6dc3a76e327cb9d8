use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::config::GridConfig;
use crate::error::{shape_err, Result};
use crate::numerics::kernels::{self, AttnMask};
use crate::numerics::{add_const, add_uniform, Graph, ParamId, ParamStore, SeqLayout, Var};
use crate::real::Real;
use crate::rng::SeededRng;

/// Prefix of parameters that belong to the speaker network (excluded from counts).
pub const SPEAKER_PREFIX: &str = "speaker.";

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ProjNorm {
    w: ParamId,
    b: ParamId,
    alpha: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    q: ProjNorm,
    k: ProjNorm,
    v: ProjNorm,
    out: ProjNorm,
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    f_gamma: ParamId,
    f_beta: ParamId,
    f_fwd: LstmIds,
    f_bwd: LstmIds,
    f_w: ParamId,
    f_b: ParamId,
    t_gamma: ParamId,
    t_beta: ParamId,
    t_lstm: LstmIds,
    t_w: ParamId,
    t_b: ParamId,
    attn: Option<AttnIds>,
}

#[derive(Debug, Clone)]
struct SpeakerNet {
    enc_w: ParamId,
    enc_b: ParamId,
    block: BlockIds,
    proj_w: ParamId,
    proj_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
}

/// Causal TF-GridNet. Holds parameter handles only; values live in a
/// [`ParamStore`] passed to every call.
///
/// Latents are laid out `[T, F, D]`; the network input is `[T, F, 4]` with
/// real parts of both ears followed by imaginary parts, and the output is
/// `[T, F, 2K]` with `K` real channels followed by `K` imaginary channels.
#[derive(Debug, Clone)]
pub struct GridNet {
    cfg: GridConfig,
    bins: usize,
    enc_w: ParamId,
    enc_b: ParamId,
    blocks: Vec<BlockIds>,
    dec_w: ParamId,
    dec_b: ParamId,
    speaker: Option<SpeakerNet>,
}

/// Input channels: real and imaginary parts of a binaural spectrogram.
pub const INPUT_CHANNELS: usize = 4;

fn lstm_ids<T: Real>(s: &mut ParamStore<T>, r: &mut SeededRng, name: &str, input: usize, h: usize) -> LstmIds {
    LstmIds {
        w_ih: add_uniform(s, r, &format!("{name}.w_ih"), &[4 * h, input], h),
        w_hh: add_uniform(s, r, &format!("{name}.w_hh"), &[4 * h, h], h),
        b: add_uniform(s, r, &format!("{name}.b"), &[4 * h], h),
    }
}

fn proj_norm<T: Real>(
    s: &mut ParamStore<T>,
    r: &mut SeededRng,
    name: &str,
    out: usize,
    input: usize,
    slopes: usize,
    affine: &[usize],
) -> ProjNorm {
    ProjNorm {
        w: add_uniform(s, r, &format!("{name}.w"), &[out, input], input),
        b: add_uniform(s, r, &format!("{name}.b"), &[out], input),
        alpha: add_const(s, &format!("{name}.alpha"), &[slopes], 0.25),
        gamma: add_const(s, &format!("{name}.gamma"), affine, 1.0),
        beta: add_const(s, &format!("{name}.beta"), affine, 0.0),
    }
}

fn block_ids<T: Real>(
    s: &mut ParamStore<T>,
    r: &mut SeededRng,
    name: &str,
    cfg: &GridConfig,
    bins: usize,
    attention: bool,
) -> BlockIds {
    let (d, h) = (cfg.d, cfg.h);
    let attn = attention.then(|| {
        let (l, e) = (cfg.l, cfg.head_qk(bins));
        let dv = d / l;
        AttnIds {
            q: proj_norm(s, r, &format!("{name}.attn.q"), l * e, d, l, &[l, bins, e]),
            k: proj_norm(s, r, &format!("{name}.attn.k"), l * e, d, l, &[l, bins, e]),
            v: proj_norm(s, r, &format!("{name}.attn.v"), d, d, l, &[l, bins, dv]),
            out: proj_norm(s, r, &format!("{name}.attn.out"), d, d, 1, &[bins, d]),
        }
    });
    BlockIds {
        f_gamma: add_const(s, &format!("{name}.freq.norm.gamma"), &[d], 1.0),
        f_beta: add_const(s, &format!("{name}.freq.norm.beta"), &[d], 0.0),
        f_fwd: lstm_ids(s, r, &format!("{name}.freq.fwd"), d, h),
        f_bwd: lstm_ids(s, r, &format!("{name}.freq.bwd"), d, h),
        f_w: add_uniform(s, r, &format!("{name}.freq.proj.w"), &[d, 2 * h], 2 * h),
        f_b: add_uniform(s, r, &format!("{name}.freq.proj.b"), &[d], 2 * h),
        t_gamma: add_const(s, &format!("{name}.time.norm.gamma"), &[d], 1.0),
        t_beta: add_const(s, &format!("{name}.time.norm.beta"), &[d], 0.0),
        t_lstm: lstm_ids(s, r, &format!("{name}.time.lstm"), d, h),
        t_w: add_uniform(s, r, &format!("{name}.time.proj.w"), &[d, h], h),
        t_b: add_uniform(s, r, &format!("{name}.time.proj.b"), &[d], h),
        attn,
    }
}

impl GridNet {
    /// Registers a freshly initialized model in `store`.
    pub fn new<T: Real>(cfg: GridConfig, bins: usize, store: &mut ParamStore<T>, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        if bins == 0 {
            return Err(shape_err!("model needs at least one frequency bin"));
        }
        let (d, k) = (cfg.d, cfg.k);
        let enc_w = add_uniform(store, rng, "encoder.w", &[d, INPUT_CHANNELS], INPUT_CHANNELS);
        let enc_b = add_uniform(store, rng, "encoder.b", &[d], INPUT_CHANNELS);
        let blocks = (0..cfg.b)
            .map(|j| block_ids(store, rng, &format!("block{j}"), &cfg, bins, cfg.attention))
            .collect();
        let dec_w = add_uniform(store, rng, "decoder.w", &[2 * k, d], d);
        let dec_b = add_uniform(store, rng, "decoder.b", &[2 * k], d);
        let speaker = cfg.speaker_dim.map(|e| SpeakerNet {
            enc_w: add_uniform(store, rng, "speaker.encoder.w", &[d, INPUT_CHANNELS], INPUT_CHANNELS),
            enc_b: add_uniform(store, rng, "speaker.encoder.b", &[d], INPUT_CHANNELS),
            block: block_ids(store, rng, "speaker.block", &cfg, bins, false),
            proj_w: add_uniform(store, rng, "speaker.proj.w", &[e, d], d),
            proj_b: add_uniform(store, rng, "speaker.proj.b", &[e], d),
            gate_w: add_const(store, "speaker.gate.w", &[d, e], 0.0),
            gate_b: add_const(store, "speaker.gate.b", &[d], 1.0),
        });
        Ok(Self {
            cfg,
            bins,
            enc_w,
            enc_b,
            blocks,
            dec_w,
            dec_b,
            speaker,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn has_speaker(&self) -> bool {
        self.speaker.is_some()
    }

    /// Trainable scalars registered by this model, excluding the speaker network.
    pub fn enumerate_params<T: Real>(store: &ParamStore<T>) -> usize {
        store.count_where(|n| !n.starts_with(SPEAKER_PREFIX))
    }

    // ---- tape forward ----

    /// `[T, F, 4]` → `Z^0: [T, F, D]`
    pub fn encode<T: Real>(&self, s: &ParamStore<T>, g: &mut Graph<T>, x: Var) -> Result<Var> {
        if g.shape(x).len() != 3 || g.shape(x)[1] != self.bins || g.shape(x)[2] != INPUT_CHANNELS {
            return Err(shape_err!("encoder input {:?}, expected [T, {}, {}]", g.shape(x), self.bins, INPUT_CHANNELS));
        }
        let (w, b) = (g.param(s, self.enc_w), g.param(s, self.enc_b));
        g.dense(x, w, Some(b))
    }

    /// Speaker embedding `[E]` of an enrollment input `[T, F, 4]`.
    pub fn speaker_embedding<T: Real>(&self, s: &ParamStore<T>, g: &mut Graph<T>, enrollment: Var) -> Result<Var> {
        let sp = self.speaker.as_ref().ok_or_else(|| shape_err!("model has no speaker network"))?;
        let (w, b) = (g.param(s, sp.enc_w), g.param(s, sp.enc_b));
        let z = g.dense(enrollment, w, Some(b))?;
        let z = block_graph(&self.cfg, self.bins, &sp.block, s, g, z)?;
        let pooled = g.mean_rows(z)?;
        let (w, b) = (g.param(s, sp.proj_w), g.param(s, sp.proj_b));
        let pooled = g.reshape(pooled, &[1, self.cfg.d])?;
        let e = g.dense(pooled, w, Some(b))?;
        let n = g.value(e).len();
        g.reshape(e, &[n])
    }

    /// Scales `Z^0` per channel by a gate computed from the speaker embedding.
    pub fn condition<T: Real>(&self, s: &ParamStore<T>, g: &mut Graph<T>, z: Var, embedding: Var) -> Result<Var> {
        let sp = self.speaker.as_ref().ok_or_else(|| shape_err!("model has no speaker network"))?;
        let (w, b) = (g.param(s, sp.gate_w), g.param(s, sp.gate_b));
        let e = g.reshape(embedding, &[1, g.value(embedding).len()])?;
        let gate = g.dense(e, w, Some(b))?;
        let gate = g.reshape(gate, &[self.cfg.d])?;
        g.scale_last(z, gate)
    }

    /// Grid block `j`: `Z^j` → `Z^{j+1}`.
    pub fn block<T: Real>(&self, s: &ParamStore<T>, g: &mut Graph<T>, j: usize, z: Var) -> Result<Var> {
        block_graph(&self.cfg, self.bins, &self.blocks[j], s, g, z)
    }

    /// `Z^B: [T, F, D]` → `[T, F, 2K]`
    pub fn decode<T: Real>(&self, s: &ParamStore<T>, g: &mut Graph<T>, z: Var) -> Result<Var> {
        let (w, b) = (g.param(s, self.dec_w), g.param(s, self.dec_b));
        g.dense(z, w, Some(b))
    }

    /// Full forward pass without hints.
    pub fn forward<T: Real>(&self, s: &ParamStore<T>, g: &mut Graph<T>, x: Var, speaker: Option<Var>) -> Result<Var> {
        let mut z = self.encode(s, g, x)?;
        if let Some(e) = speaker {
            z = self.condition(s, g, z, e)?;
        }
        for j in 0..self.blocks.len() {
            z = self.block(s, g, j, z)?;
        }
        self.decode(s, g, z)
    }

    // ---- streaming ----

    pub fn new_state<T: Real>(&self) -> GridState<T> {
        let (f, h) = (self.bins, self.cfg.h);
        GridState {
            blocks: self
                .blocks
                .iter()
                .map(|_| BlockState {
                    h: vec![T::zero(); f * h],
                    c: vec![T::zero(); f * h],
                    keys: VecDeque::new(),
                    values: VecDeque::new(),
                })
                .collect(),
        }
    }

    /// One input frame `[F, 4]` → `[F, D]`.
    pub fn encode_frame<T: Real>(&self, s: &ParamStore<T>, x: &[T]) -> Vec<T> {
        dense_rows(x, INPUT_CHANNELS, s.get(self.enc_w).data(), Some(s.get(self.enc_b).data()), self.cfg.d)
    }

    /// Per-channel gate for a speaker embedding; multiply into every row of `Z^0`.
    pub fn speaker_gate<T: Real>(&self, s: &ParamStore<T>, embedding: &[T]) -> Result<Vec<T>> {
        let sp = self.speaker.as_ref().ok_or_else(|| shape_err!("model has no speaker network"))?;
        if embedding.len() != s.get(sp.gate_w).dim(1) {
            return Err(shape_err!("speaker embedding has {} values", embedding.len()));
        }
        Ok(dense_rows(embedding, embedding.len(), s.get(sp.gate_w).data(), Some(s.get(sp.gate_b).data()), self.cfg.d))
    }

    /// Gate computed from an enrollment input `[T, F, 4]`, for streaming use.
    pub fn enrollment_gate<T: Real>(&self, s: &ParamStore<T>, enrollment: &crate::Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let x = g.input(enrollment.clone());
        let e = self.speaker_embedding(s, &mut g, x)?;
        let e = g.value(e).data().to_vec();
        self.speaker_gate(s, &e)
    }

    /// Advances block `j` by one frame, updating `z` (`[F, D]`) in place.
    pub fn block_frame<T: Real>(&self, s: &ParamStore<T>, j: usize, state: &mut GridState<T>, z: &mut [T]) {
        block_frame(&self.cfg, self.bins, &self.blocks[j], s, &mut state.blocks[j], z)
    }

    /// One latent frame `[F, D]` → `[F, 2K]`.
    pub fn decode_frame<T: Real>(&self, s: &ParamStore<T>, z: &[T]) -> Vec<T> {
        dense_rows(z, self.cfg.d, s.get(self.dec_w).data(), Some(s.get(self.dec_b).data()), 2 * self.cfg.k)
    }

    /// Full streaming step without hints: `[F, 4]` → `[F, 2K]`.
    pub fn step<T: Real>(&self, s: &ParamStore<T>, state: &mut GridState<T>, x: &[T], gate: Option<&[T]>) -> Vec<T> {
        let mut z = self.encode_frame(s, x);
        if let Some(gate) = gate {
            apply_gate(&mut z, gate);
        }
        for j in 0..self.blocks.len() {
            self.block_frame(s, j, state, &mut z);
        }
        self.decode_frame(s, &z)
    }
}

/// Streaming state: per-bin temporal LSTM carries and attention key/value caches.
#[derive(Debug, Clone)]
pub struct GridState<T> {
    blocks: Vec<BlockState<T>>,
}

impl<T> GridState<T> {
    /// Frames currently held in the attention cache of block `j`.
    pub fn cached_frames(&self, j: usize) -> usize {
        self.blocks[j].keys.len()
    }
}

#[derive(Debug, Clone)]
struct BlockState<T> {
    h: Vec<T>,
    c: Vec<T>,
    keys: VecDeque<Vec<T>>,
    values: VecDeque<Vec<T>>,
}

pub(crate) fn apply_gate<T: Real>(z: &mut [T], gate: &[T]) {
    for row in z.chunks_exact_mut(gate.len()) {
        for (v, &g) in row.iter_mut().zip(gate) {
            *v *= g;
        }
    }
}

fn block_graph<T: Real>(cfg: &GridConfig, bins: usize, ids: &BlockIds, s: &ParamStore<T>, g: &mut Graph<T>, z: Var) -> Result<Var> {
    let d = cfg.d;
    let shape = g.shape(z).to_vec();
    if shape.len() != 3 || shape[1] != bins || shape[2] != d {
        return Err(shape_err!("latent {:?}, expected [T, {}, {}]", shape, bins, d));
    }
    let frames = shape[0];
    let p = |g: &mut Graph<T>, id| g.param(s, id);

    // frequency stage: bidirectional LSTM across bins within each frame
    let (ga, be) = (p(g, ids.f_gamma), p(g, ids.f_beta));
    let n = g.layer_norm(z, ga, be, d)?;
    let fw = lstm_graph(g, s, &ids.f_fwd, n, SeqLayout::BatchMajor, false)?;
    let bw = lstm_graph(g, s, &ids.f_bwd, n, SeqLayout::BatchMajor, true)?;
    let cat = g.concat_last(fw, bw)?;
    let (w, b) = (p(g, ids.f_w), p(g, ids.f_b));
    let y = g.dense(cat, w, Some(b))?;
    let z = g.add(z, y)?;

    // time stage: unidirectional LSTM along frames within each bin
    let (ga, be) = (p(g, ids.t_gamma), p(g, ids.t_beta));
    let n = g.layer_norm(z, ga, be, d)?;
    let y = lstm_graph(g, s, &ids.t_lstm, n, SeqLayout::SeqMajor, false)?;
    let (w, b) = (p(g, ids.t_w), p(g, ids.t_b));
    let y = g.dense(y, w, Some(b))?;
    let mut z = g.add(z, y)?;

    if let Some(a) = &ids.attn {
        let (l, e) = (cfg.l, cfg.head_qk(bins));
        let dv = d / l;
        let heads = |g: &mut Graph<T>, pn: &ProjNorm, width: usize| -> Result<Var> {
            let (w, b) = (g.param(s, pn.w), g.param(s, pn.b));
            let x = g.dense(z, w, Some(b))?;
            let x = g.reshape(x, &[frames, bins, l, width])?;
            let x = g.permute(x, &[0, 2, 1, 3])?;
            let alpha = g.param(s, pn.alpha);
            let x = g.prelu(x, alpha, bins * width)?;
            let (ga, be) = (g.param(s, pn.gamma), g.param(s, pn.beta));
            let x = g.layer_norm(x, ga, be, bins * width)?;
            let x = g.permute(x, &[1, 0, 2, 3])?;
            g.reshape(x, &[l, frames, bins * width])
        };
        let q = heads(g, &a.q, e)?;
        let k = heads(g, &a.k, e)?;
        let v = heads(g, &a.v, dv)?;
        let scale = T::one() / T::from_usize(bins * e).sqrt();
        let ctx = g.attention(q, k, v, AttnMask::causal(cfg.attention_window), scale)?;
        let ctx = g.reshape(ctx, &[l, frames, bins, dv])?;
        let ctx = g.permute(ctx, &[1, 2, 0, 3])?;
        let ctx = g.reshape(ctx, &[frames, bins, d])?;
        let (w, b) = (p(g, a.out.w), p(g, a.out.b));
        let y = g.dense(ctx, w, Some(b))?;
        let alpha = p(g, a.out.alpha);
        let y = g.prelu(y, alpha, bins * d)?;
        let (ga, be) = (p(g, a.out.gamma), p(g, a.out.beta));
        let y = g.layer_norm(y, ga, be, bins * d)?;
        z = g.add(z, y)?;
    }
    Ok(z)
}

fn lstm_graph<T: Real>(g: &mut Graph<T>, s: &ParamStore<T>, ids: &LstmIds, x: Var, layout: SeqLayout, reverse: bool) -> Result<Var> {
    let (wi, wh, b) = (g.param(s, ids.w_ih), g.param(s, ids.w_hh), g.param(s, ids.b));
    g.lstm(x, wi, wh, b, layout, reverse)
}

pub(crate) fn dense_rows<T: Real>(x: &[T], in_dim: usize, w: &[T], b: Option<&[T]>, out_dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len() / in_dim * out_dim];
    kernels::dense_forward(x, in_dim, w, b, out_dim, &mut out);
    out
}

fn norm_rows<T: Real>(x: &[T], norm: usize, gamma: &[T], beta: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); x.len() / norm];
    kernels::layer_norm_forward(x, norm, gamma, beta, &mut out, &mut xhat, &mut rstd);
    out
}

fn prelu_rows<T: Real>(x: &mut [T], alpha: &[T], inner: usize) {
    for (i, v) in x.iter_mut().enumerate() {
        *v = kernels::prelu(*v, alpha[(i / inner) % alpha.len()]);
    }
}

/// Bidirectional LSTM over the rows of `x` (`[F, in]`) → `[F, 2H]`.
fn bilstm_rows<T: Real>(s: &ParamStore<T>, fwd: &LstmIds, bwd: &LstmIds, x: &[T], in_dim: usize, h: usize) -> Vec<T> {
    let f = x.len() / in_dim;
    let mut out = vec![T::zero(); f * 2 * h];
    let mut gates = vec![T::zero(); 4 * h];
    for (ids, reverse, off) in [(fwd, false, 0), (bwd, true, h)] {
        let (wi, wh, b) = (s.get(ids.w_ih).data(), s.get(ids.w_hh).data(), s.get(ids.b).data());
        let mut hs = vec![T::zero(); h];
        let mut cs = vec![T::zero(); h];
        let mut hn = vec![T::zero(); h];
        let mut cn = vec![T::zero(); h];
        for p in 0..f {
            let row = if reverse { f - 1 - p } else { p };
            kernels::lstm_cell(&x[row * in_dim..(row + 1) * in_dim], &hs, &cs, wi, wh, b, &mut gates, &mut hn, &mut cn);
            out[row * 2 * h + off..row * 2 * h + off + h].copy_from_slice(&hn);
            core::mem::swap(&mut hs, &mut hn);
            core::mem::swap(&mut cs, &mut cn);
        }
    }
    out
}

fn block_frame<T: Real>(cfg: &GridConfig, bins: usize, ids: &BlockIds, s: &ParamStore<T>, st: &mut BlockState<T>, z: &mut [T]) {
    let (d, h) = (cfg.d, cfg.h);
    let v = |id: ParamId| s.get(id).data();

    let n = norm_rows(z, d, v(ids.f_gamma), v(ids.f_beta));
    let cat = bilstm_rows(s, &ids.f_fwd, &ids.f_bwd, &n, d, h);
    let y = dense_rows(&cat, 2 * h, v(ids.f_w), Some(v(ids.f_b)), d);
    add_in(z, &y);

    let n = norm_rows(z, d, v(ids.t_gamma), v(ids.t_beta));
    let mut hid = vec![T::zero(); bins * h];
    let mut gates = vec![T::zero(); 4 * h];
    let mut hn = vec![T::zero(); h];
    let mut cn = vec![T::zero(); h];
    let lw = &ids.t_lstm;
    for f in 0..bins {
        kernels::lstm_cell(
            &n[f * d..(f + 1) * d],
            &st.h[f * h..(f + 1) * h],
            &st.c[f * h..(f + 1) * h],
            v(lw.w_ih),
            v(lw.w_hh),
            v(lw.b),
            &mut gates,
            &mut hn,
            &mut cn,
        );
        st.h[f * h..(f + 1) * h].copy_from_slice(&hn);
        st.c[f * h..(f + 1) * h].copy_from_slice(&cn);
        hid[f * h..(f + 1) * h].copy_from_slice(&hn);
    }
    let y = dense_rows(&hid, h, v(ids.t_w), Some(v(ids.t_b)), d);
    add_in(z, &y);

    if let Some(a) = &ids.attn {
        let (l, e) = (cfg.l, cfg.head_qk(bins));
        let dv = d / l;
        // [F, L*w] → per-head [L, F, w], activated and normalized per head
        let heads = |pn: &ProjNorm, width: usize| -> Vec<T> {
            let x = dense_rows(z, d, v(pn.w), Some(v(pn.b)), l * width);
            let mut t = vec![T::zero(); x.len()];
            for f in 0..bins {
                for hd in 0..l {
                    let src = (f * l + hd) * width;
                    let dst = (hd * bins + f) * width;
                    t[dst..dst + width].copy_from_slice(&x[src..src + width]);
                }
            }
            prelu_rows(&mut t, v(pn.alpha), bins * width);
            norm_rows(&t, bins * width, v(pn.gamma), v(pn.beta))
        };
        let q = heads(&a.q, e);
        st.keys.push_back(heads(&a.k, e));
        st.values.push_back(heads(&a.v, dv));
        while st.keys.len() > cfg.attention_window {
            st.keys.pop_front();
            st.values.pop_front();
        }
        let (qw, vw) = (bins * e, bins * dv);
        let scale = T::one() / T::from_usize(qw).sqrt();
        let n = st.keys.len();
        let mut probs = vec![T::zero(); n];
        let mut o = vec![T::zero(); vw];
        let mut ctx = vec![T::zero(); bins * d];
        for hd in 0..l {
            kernels::attend(
                &q[hd * qw..(hd + 1) * qw],
                n,
                |j| &st.keys[j][hd * qw..(hd + 1) * qw],
                |j| &st.values[j][hd * vw..(hd + 1) * vw],
                scale,
                &mut o,
                &mut probs,
            );
            for f in 0..bins {
                ctx[f * d + hd * dv..f * d + (hd + 1) * dv].copy_from_slice(&o[f * dv..(f + 1) * dv]);
            }
        }
        let mut y = dense_rows(&ctx, d, v(a.out.w), Some(v(a.out.b)), d);
        prelu_rows(&mut y, v(a.out.alpha), bins * d);
        let y = norm_rows(&y, bins * d, v(a.out.gamma), v(a.out.beta));
        add_in(z, &y);
    }
}

pub(crate) fn add_in<T: Real>(z: &mut [T], y: &[T]) {
    for (a, &b) in z.iter_mut().zip(y) {
        *a += b;
    }
}
