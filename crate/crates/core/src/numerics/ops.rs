//! Stand-alone forward operations on [`Tensor`]s, plus the tape-level
//! multi-head attention composite used by the models.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::kernels::{self, AttnMask};
use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Causal 1-D convolution: `input` is `[C_in, T]`, `kernel` `[C_out, C_in, k]`.
/// Output time `t` reads inputs `t-k+1 ..= t` with zero padding on the left.
pub fn causal_conv1d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 2 || ks.len() != 3 || ks[1] != is[0] || ks[2] == 0 {
        return Err(shape_err!("conv input {:?} kernel {:?}", is, ks));
    }
    let (cin, frames, cout, k) = (is[0], is[1], ks[0], ks[2]);
    if bias.is_some_and(|b| b.shape() != [cout]) {
        return Err(shape_err!("conv bias must have {} entries", cout));
    }
    // time-major copy so the shared kernel can be used
    let mut x = vec![T::zero(); cin * frames];
    for c in 0..cin {
        for t in 0..frames {
            x[t * cin + c] = input.data()[c * frames + t];
        }
    }
    let zeros = vec![T::zero(); cout];
    let b = bias.map_or(&zeros[..], |b| b.data());
    let mut y = vec![T::zero(); cout * frames];
    super::graph::conv_forward(&x, kernel.data(), b, frames, 1, cin, cout, k, &mut y);
    let mut out = vec![T::zero(); cout * frames];
    for t in 0..frames {
        for o in 0..cout {
            out[o * frames + t] = y[t * cout + o];
        }
    }
    Tensor::from_vec(&[cout, frames], out)
}

/// LSTM parameters with gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmWeights<T> {
    /// `[4H, in]`
    pub w_ih: Tensor<T>,
    /// `[4H, H]`
    pub w_hh: Tensor<T>,
    /// `[4H]`
    pub b: Tensor<T>,
}

impl<T: Real> LstmWeights<T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.dim(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

/// One LSTM step; returns the output (equal to the new hidden state) and the new state.
pub fn lstm_step<T: Real>(x: &[T], state: &LstmState<T>, w: &LstmWeights<T>) -> Result<(Vec<T>, LstmState<T>)> {
    let hid = w.hidden();
    if w.w_ih.shape() != [4 * hid, x.len()]
        || w.w_hh.shape() != [4 * hid, hid]
        || w.b.shape() != [4 * hid]
        || state.h.len() != hid
        || state.c.len() != hid
    {
        return Err(shape_err!(
            "lstm weights {:?}/{:?} with input {} and state {}",
            w.w_ih.shape(),
            w.w_hh.shape(),
            x.len(),
            state.h.len()
        ));
    }
    let mut gates = vec![T::zero(); 4 * hid];
    let mut next = LstmState::zeros(hid);
    kernels::lstm_cell(x, &state.h, &state.c, w.w_ih.data(), w.w_hh.data(), w.b.data(), &mut gates, &mut next.h, &mut next.c);
    Ok((next.h.clone(), next))
}

/// Projections of a multi-head attention block. Input projections are
/// `[D, D]` with optional biases; the output projection has no bias.
#[derive(Debug, Clone)]
pub struct MhaWeights<T> {
    pub wq: Tensor<T>,
    pub bq: Option<Tensor<T>>,
    pub wk: Tensor<T>,
    pub bk: Option<Tensor<T>>,
    pub wv: Tensor<T>,
    pub bv: Option<Tensor<T>>,
    pub wo: Tensor<T>,
}

/// Multi-head attention of `query` (`[T_q, D]`) over `kv` (`[T_kv, D]`).
/// The mask is applied per query index to key indices.
pub fn mha<T: Real>(query: &Tensor<T>, kv: &Tensor<T>, w: &MhaWeights<T>, heads: usize, mask: AttnMask) -> Result<Tensor<T>> {
    let (qs, ks) = (query.shape(), kv.shape());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(shape_err!("mha query {:?} keys {:?}", qs, ks));
    }
    let (tq, d, tk) = (qs[0], qs[1], ks[0]);
    if heads == 0 || d % heads != 0 {
        return Err(shape_err!("model dim {} not divisible by {} heads", d, heads));
    }
    for m in [&w.wq, &w.wk, &w.wv, &w.wo] {
        if m.shape() != [d, d] {
            return Err(shape_err!("mha projection {:?}, expected [{}, {}]", m.shape(), d, d));
        }
    }
    let proj = |x: &Tensor<T>, wm: &Tensor<T>, b: &Option<Tensor<T>>| {
        let mut out = vec![T::zero(); x.len()];
        kernels::dense_forward(x.data(), d, wm.data(), b.as_ref().map(|b| b.data()), d, &mut out);
        out
    };
    let q = proj(query, &w.wq, &w.bq);
    let k = proj(kv, &w.wk, &w.bk);
    let v = proj(kv, &w.wv, &w.bv);
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).sqrt();
    let mut ctx = vec![T::zero(); tq * d];
    let mut probs = vec![T::zero(); mask.max_keys(tk).max(1)];
    let mut qh = vec![T::zero(); dh];
    let mut kh = vec![T::zero(); tk * dh];
    let mut vh = vec![T::zero(); tk * dh];
    let mut oh = vec![T::zero(); dh];
    for h in 0..heads {
        for j in 0..tk {
            kh[j * dh..(j + 1) * dh].copy_from_slice(&k[j * d + h * dh..j * d + (h + 1) * dh]);
            vh[j * dh..(j + 1) * dh].copy_from_slice(&v[j * d + h * dh..j * d + (h + 1) * dh]);
        }
        for i in 0..tq {
            qh.copy_from_slice(&q[i * d + h * dh..i * d + (h + 1) * dh]);
            let r = mask.key_range(i, tk);
            let lo = r.start;
            kernels::attend(
                &qh,
                r.len(),
                |j| &kh[(lo + j) * dh..(lo + j + 1) * dh],
                |j| &vh[(lo + j) * dh..(lo + j + 1) * dh],
                scale,
                &mut oh,
                &mut probs,
            );
            ctx[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&oh);
        }
    }
    let mut out = vec![T::zero(); tq * d];
    kernels::dense_forward(&ctx, d, w.wo.data(), None, d, &mut out);
    Tensor::from_vec(&[tq, d], out)
}

/// FiLM conditioning of `z` (`[D, F]`) by `cond` (`[D_e, F]`). The shared
/// dense map `w` (`[2D, D_e]`, bias `b`) yields `[gamma | beta]` per bin.
pub fn film<T: Real>(z: &Tensor<T>, cond: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (zs, cs) = (z.shape(), cond.shape());
    if zs.len() != 2 || cs.len() != 2 || zs[1] != cs[1] || w.shape() != [2 * zs[0], cs[0]] || b.shape() != [2 * zs[0]] {
        return Err(shape_err!("film z {:?} cond {:?} weights {:?}", zs, cs, w.shape()));
    }
    let (d, f, de) = (zs[0], zs[1], cs[0]);
    let mut out = vec![T::zero(); d * f];
    let mut c = vec![T::zero(); de];
    let mut gb = vec![T::zero(); 2 * d];
    let mut zr = vec![T::zero(); d];
    let mut y = vec![T::zero(); d];
    for bin in 0..f {
        for e in 0..de {
            c[e] = cond.data()[e * f + bin];
        }
        kernels::dense_forward(&c, de, w.data(), Some(b.data()), 2 * d, &mut gb);
        for j in 0..d {
            zr[j] = z.data()[j * f + bin];
        }
        kernels::film_forward(&zr, &gb, d, &mut y);
        for j in 0..d {
            out[j * f + bin] = y[j];
        }
    }
    Tensor::from_vec(&[d, f], out)
}

/// Tape variables of a multi-head attention block (see [`MhaWeights`]).
#[derive(Debug, Clone, Copy)]
pub struct MhaVars {
    pub wq: Var,
    pub bq: Option<Var>,
    pub wk: Var,
    pub bk: Option<Var>,
    pub wv: Var,
    pub bv: Option<Var>,
    pub wo: Var,
}

/// Multi-head attention on the tape over batched sequences:
/// `query: [B, T_q, D]`, `kv: [B, T_kv, D]` → `[B, T_q, D]`.
pub fn mha_graph<T: Real>(g: &mut Graph<T>, query: Var, kv: Var, w: &MhaVars, heads: usize, mask: AttnMask) -> Result<Var> {
    let (qs, ks) = (g.shape(query).to_vec(), g.shape(kv).to_vec());
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
        return Err(shape_err!("mha query {:?} keys {:?}", qs, ks));
    }
    let (batch, tq, d, tk) = (qs[0], qs[1], qs[2], ks[1]);
    if heads == 0 || d % heads != 0 {
        return Err(shape_err!("model dim {} not divisible by {} heads", d, heads));
    }
    let dh = d / heads;
    let q = g.dense(query, w.wq, w.bq)?;
    let k = g.dense(kv, w.wk, w.bk)?;
    let v = g.dense(kv, w.wv, w.bv)?;
    let split = |g: &mut Graph<T>, x: Var, t: usize| -> Result<Var> {
        let x = g.reshape(x, &[batch, t, heads, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch * heads, t, dh])
    };
    let (q, k, v) = (split(g, q, tq)?, split(g, k, tk)?, split(g, v, tk)?);
    let scale = T::one() / T::from_usize(dh).sqrt();
    let ctx = g.attention(q, k, v, mask, scale)?;
    let ctx = g.reshape(ctx, &[batch, heads, tq, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[batch, tq, d])?;
    g.dense(ctx, w.wo, None)
}
