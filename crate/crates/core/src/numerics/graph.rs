//! Reverse-mode autodiff over a tape of coarse tensor operations.
//!
//! Each operation records its inputs and whatever it needs for the backward
//! pass (gate activations, normalization statistics, attention weights).
//! Shapes are fixed when a node is created.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_complex::Complex;

use super::kernels::{self, AttnMask};
use super::params::{Gradients, ParamId, ParamStore};
use crate::dsp::Stft;
use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Memory layout of a 3-D sequence tensor for the LSTM op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqLayout {
    /// `[steps, batch, features]`
    SeqMajor,
    /// `[batch, steps, features]`
    BatchMajor,
}

impl SeqLayout {
    fn dims(self, shape: &[usize]) -> (usize, usize) {
        match self {
            SeqLayout::SeqMajor => (shape[0], shape[1]),
            SeqLayout::BatchMajor => (shape[1], shape[0]),
        }
    }

    #[inline]
    fn row(self, s: usize, n: usize, steps: usize, batch: usize) -> usize {
        match self {
            SeqLayout::SeqMajor => s * batch + n,
            SeqLayout::BatchMajor => n * steps + s,
        }
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        norm: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Prelu {
        x: Var,
        alpha: Var,
        inner: usize,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Reshape(Var),
    Concat(Var, Var),
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        layout: SeqLayout,
        reverse: bool,
        gates: Vec<T>,
        cells: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        mask: AttnMask,
        scale: T,
        probs: Vec<T>,
        stride: usize,
    },
    Film {
        z: Var,
        gb: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    Shift {
        x: Var,
        frames: usize,
    },
    ScaleLast {
        x: Var,
        s: Var,
    },
    MeanRows(Var),
    Istft {
        x: Var,
        stft: Stft<T>,
        channels: usize,
    },
    NegSiSdr {
        est: Var,
        reference: Vec<Vec<T>>,
        region: Range<usize>,
        pairs: Vec<(usize, usize)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A tape of operations built during one forward pass.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, &[])
    }

    /// Trainable leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let trainable = store.param(id).trainable;
        let v = self.push(store.get(id).clone(), Op::Param(id), &[]);
        self.nodes[v.0].needs_grad = trainable;
        v
    }

    /// Errors if any value on the tape is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for n in &self.nodes {
            if !n.value.all_finite() {
                return Err(Error::NumericFault(op_name(&n.op).into()));
            }
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err!("add {:?} + {:?}", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Affine map over the last dimension; `w` is `[out, in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let in_dim = *xs.last().ok_or_else(|| shape_err!("dense on scalar"))?;
        if ws.len() != 2 || ws[1] != in_dim {
            return Err(shape_err!("dense weight {:?} for input {:?}", ws, xs));
        }
        let out_dim = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(shape_err!("dense bias {:?}, expected [{}]", self.shape(b), out_dim));
            }
        }
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = out_dim;
        let mut out = Tensor::zeros(&shape);
        kernels::dense_forward(
            self.value(x).data(),
            in_dim,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out_dim,
            out.data_mut(),
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Dense { x, w, b }, &inputs))
    }

    /// Layer normalization over consecutive groups of `norm` elements, with
    /// affine parameters spanning the trailing `gamma.len()` elements.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, norm: usize) -> Result<Var> {
        let n = self.value(x).len();
        let affine = self.value(gamma).len();
        if norm == 0 || affine % norm != 0 || n % affine != 0 || self.value(beta).len() != affine {
            return Err(shape_err!(
                "layer norm group {} affine {} on {} values",
                norm,
                affine,
                n
            ));
        }
        let mut out = Tensor::zeros(self.shape(x));
        let mut xhat = vec![T::zero(); n];
        let mut rstd = vec![T::zero(); n / norm];
        kernels::layer_norm_forward(
            self.value(x).data(),
            norm,
            self.value(gamma).data(),
            self.value(beta).data(),
            out.data_mut(),
            &mut xhat,
            &mut rstd,
        );
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            norm,
            xhat,
            rstd,
        };
        Ok(self.push(out, op, &[x, gamma, beta]))
    }

    /// Parametric ReLU with one slope per channel; element `i` uses
    /// `alpha[(i / inner) % alpha.len()]`.
    pub fn prelu(&mut self, x: Var, alpha: Var, inner: usize) -> Result<Var> {
        let a = self.value(alpha).data().to_vec();
        let xs = self.value(x);
        if inner == 0 || a.is_empty() || xs.len() % (inner * a.len()) != 0 {
            return Err(shape_err!("prelu with {} slopes over blocks of {}", a.len(), inner));
        }
        let data = xs
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| kernels::prelu(v, a[(i / inner) % a.len()]))
            .collect();
        let out = Tensor::from_vec(xs.shape(), data)?;
        Ok(self.push(out, Op::Prelu { x, alpha, inner }, &[x, alpha]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(shape_err!("invalid permutation {:?} of {:?}", perm, xs));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
        let src = permute_sources(&xs, perm);
        let data = self.value(x).data();
        let out = Tensor::from_vec(&out_shape, src.iter().map(|&i| data[i]).collect())?;
        Ok(self.push(out, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Concatenation along the last dimension.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err!("concat {:?} with {:?}", sa, sb));
        }
        let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = da + db;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for (ra, rb) in va.chunks_exact(da).zip(vb.chunks_exact(db)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    /// Unidirectional LSTM over a 3-D sequence tensor with zero initial state.
    /// With `reverse` the sequence is processed from the last step backward.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, layout: SeqLayout, reverse: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(shape_err!("lstm input must be 3-D, got {:?}", xs));
        }
        let in_dim = xs[2];
        let ws = self.shape(w_ih).to_vec();
        if ws.len() != 2 || ws[1] != in_dim || ws[0] % 4 != 0 {
            return Err(shape_err!("lstm w_ih {:?} for input dim {}", ws, in_dim));
        }
        let hid = ws[0] / 4;
        if self.shape(w_hh) != [4 * hid, hid] || self.shape(b) != [4 * hid] {
            return Err(shape_err!("lstm recurrent weights do not match hidden size {}", hid));
        }
        let (steps, batch) = layout.dims(&xs);
        let mut out = Tensor::zeros(&[xs[0], xs[1], hid]);
        let mut gates = vec![T::zero(); steps * batch * 4 * hid];
        let mut cells = vec![T::zero(); steps * batch * hid];
        {
            let xv = self.value(x).data();
            let (wi, wh, bv) = (self.value(w_ih).data(), self.value(w_hh).data(), self.value(b).data());
            let y = out.data_mut();
            let mut h = vec![T::zero(); hid];
            let mut c = vec![T::zero(); hid];
            let mut hn = vec![T::zero(); hid];
            let mut cn = vec![T::zero(); hid];
            for n in 0..batch {
                h.fill(T::zero());
                c.fill(T::zero());
                for p in 0..steps {
                    let s = if reverse { steps - 1 - p } else { p };
                    let row = layout.row(s, n, steps, batch);
                    let slot = s * batch + n;
                    kernels::lstm_cell(
                        &xv[row * in_dim..(row + 1) * in_dim],
                        &h,
                        &c,
                        wi,
                        wh,
                        bv,
                        &mut gates[slot * 4 * hid..(slot + 1) * 4 * hid],
                        &mut hn,
                        &mut cn,
                    );
                    y[row * hid..(row + 1) * hid].copy_from_slice(&hn);
                    cells[slot * hid..(slot + 1) * hid].copy_from_slice(&cn);
                    core::mem::swap(&mut h, &mut hn);
                    core::mem::swap(&mut c, &mut cn);
                }
            }
        }
        let op = Op::Lstm {
            x,
            w_ih,
            w_hh,
            b,
            layout,
            reverse,
            gates,
            cells,
        };
        Ok(self.push(out, op, &[x, w_ih, w_hh, b]))
    }

    /// Batched single-head scaled dot-product attention.
    /// `q: [B, Tq, dk]`, `k: [B, Tk, dk]`, `v: [B, Tk, dv]` → `[B, Tq, dv]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: AttnMask, scale: T) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 || qs[0] != ks[0] || ks[0] != vs[0] || qs[2] != ks[2] || ks[1] != vs[1] {
            return Err(shape_err!("attention q {:?} k {:?} v {:?}", qs, ks, vs));
        }
        let (batch, tq, dk, tk, dv) = (qs[0], qs[1], qs[2], ks[1], vs[2]);
        let stride = mask.max_keys(tk).max(1);
        let mut probs = vec![T::zero(); batch * tq * stride];
        let mut out = Tensor::zeros(&[batch, tq, dv]);
        {
            let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
            let y = out.data_mut();
            for bi in 0..batch {
                for i in 0..tq {
                    let r = mask.key_range(i, tk);
                    let lo = r.start;
                    let qrow = &qv[(bi * tq + i) * dk..(bi * tq + i + 1) * dk];
                    let slot = (bi * tq + i) * stride;
                    kernels::attend(
                        qrow,
                        r.len(),
                        |j| &kv[(bi * tk + lo + j) * dk..(bi * tk + lo + j + 1) * dk],
                        |j| &vv[(bi * tk + lo + j) * dv..(bi * tk + lo + j + 1) * dv],
                        scale,
                        &mut y[(bi * tq + i) * dv..(bi * tq + i + 1) * dv],
                        &mut probs[slot..slot + stride],
                    );
                }
            }
        }
        let op = Op::Attention {
            q,
            k,
            v,
            mask,
            scale,
            probs,
            stride,
        };
        Ok(self.push(out, op, &[q, k, v]))
    }

    /// `gamma ⊙ z + beta` where `gb` has twice the last dimension of `z`.
    pub fn film(&mut self, z: Var, gb: Var) -> Result<Var> {
        let (zs, gs) = (self.shape(z).to_vec(), self.shape(gb).to_vec());
        let dim = *zs.last().unwrap_or(&0);
        if zs.len() != gs.len() || zs[..zs.len() - 1] != gs[..gs.len() - 1] || gs.last() != Some(&(2 * dim)) {
            return Err(shape_err!("film z {:?} with modulation {:?}", zs, gs));
        }
        let mut out = Tensor::zeros(&zs);
        kernels::film_forward(self.value(z).data(), self.value(gb).data(), dim, out.data_mut());
        Ok(self.push(out, Op::Film { z, gb }, &[z, gb]))
    }

    /// Causal 1-D convolution over the leading (time) axis.
    /// `x: [T, N, Cin]`, `w: [Cout, Cin, k]`, `b: [Cout]` → `[T, N, Cout]`;
    /// kernel tap `k-1` multiplies the current frame.
    pub fn causal_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[2] || ws[2] == 0 || self.shape(b) != [ws[0]] {
            return Err(shape_err!("conv input {:?} kernel {:?}", xs, ws));
        }
        let (frames, batch, cin) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        let mut out = Tensor::zeros(&[frames, batch, cout]);
        conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            frames,
            batch,
            cin,
            cout,
            k,
            out.data_mut(),
        );
        Ok(self.push(out, Op::Conv1d { x, w, b }, &[x, w, b]))
    }

    /// Moves every frame `frames` steps later along the leading axis and fills
    /// the first `frames` frames with zeros.
    pub fn shift_time(&mut self, x: Var, frames: usize) -> Result<Var> {
        let xv = self.value(x);
        let total = xv.shape().first().copied().ok_or_else(|| shape_err!("shift on scalar"))?;
        let per = xv.len() / total.max(1);
        let mut out = Tensor::zeros(xv.shape());
        if frames < total {
            let n = (total - frames) * per;
            out.data_mut()[frames * per..].copy_from_slice(&xv.data()[..n]);
        }
        Ok(self.push(out, Op::Shift { x, frames }, &[x]))
    }

    /// Multiplies every row of the last dimension by the vector `s`.
    pub fn scale_last(&mut self, x: Var, s: Var) -> Result<Var> {
        let d = self.value(s).len();
        if self.shape(x).last() != Some(&d) || self.shape(s).len() != 1 {
            return Err(shape_err!("scale {:?} by {:?}", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for (v, &g) in row.iter_mut().zip(&sv) {
                *v *= g;
            }
        }
        Ok(self.push(out, Op::ScaleLast { x, s }, &[x, s]))
    }

    /// Mean over all leading dimensions: `[..., D]` → `[D]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let d = *self.shape(x).last().ok_or_else(|| shape_err!("mean of scalar"))?;
        let xv = self.value(x).data();
        let rows = xv.len() / d;
        let mut out = vec![T::zero(); d];
        for row in xv.chunks_exact(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::from_usize(rows.max(1));
        out.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::from_vec(&[d], out)?;
        Ok(self.push(out, Op::MeanRows(x), &[x]))
    }

    /// Overlap-add synthesis of a `[T, F, 2K]` tensor holding real parts in
    /// channels `0..K` and imaginary parts in `K..2K`. Output is `[K, L]`.
    pub fn istft(&mut self, x: Var, stft: &Stft<T>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let f = stft.config().num_bins();
        if xs.len() != 3 || xs[1] != f || xs[2] % 2 != 0 {
            return Err(shape_err!("istft input {:?} with {} bins", xs, f));
        }
        let (frames, k2) = (xs[0], xs[2]);
        let k = k2 / 2;
        let len = stft.config().output_len(frames);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(k * len);
        for c in 0..k {
            let spec: Vec<Vec<Complex<T>>> = (0..frames)
                .map(|t| {
                    (0..f)
                        .map(|b| Complex::new(xv[(t * f + b) * k2 + c], xv[(t * f + b) * k2 + k + c]))
                        .collect()
                })
                .collect();
            data.extend(stft.overlap_add(&spec));
        }
        let out = Tensor::from_vec(&[k, len], data)?;
        let op = Op::Istft {
            x,
            stft: stft.clone(),
            channels: k,
        };
        Ok(self.push(out, op, &[x]))
    }

    /// Negative mean SI-SDR (dB) over `(estimate channel, reference channel)`
    /// pairs, measured on `region`. `est` is `[K, L]`.
    pub fn neg_si_sdr(&mut self, est: Var, reference: &[Vec<T>], region: Range<usize>, pairs: &[(usize, usize)]) -> Result<Var> {
        let es = self.shape(est).to_vec();
        if es.len() != 2 || region.end > es[1] || reference.iter().any(|r| r.len() < region.end) || pairs.is_empty() {
            return Err(shape_err!("si-sdr estimate {:?} region {:?}", es, region));
        }
        let ev = self.value(est).data();
        let len = es[1];
        let mut total = 0.0;
        for &(e, r) in pairs {
            if e >= es[0] || r >= reference.len() {
                return Err(shape_err!("si-sdr pair ({}, {}) out of range", e, r));
            }
            let est_ch = &ev[e * len + region.start..e * len + region.end];
            total += crate::dsp::si_sdr(est_ch, &reference[r][region.clone()])?;
        }
        let value = Tensor::scalar(T::lit(-total / pairs.len() as f64));
        let op = Op::NegSiSdr {
            est,
            reference: reference.to_vec(),
            region,
            pairs: pairs.to_vec(),
        };
        Ok(self.push(value, op, &[est]))
    }

    /// Backpropagates from a scalar and returns the parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward from non-scalar {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        let mut out = Gradients::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                out.add(id, g);
                continue;
            }
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(out)
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].needs_grad;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        acc(grads, nodes, v).add_assign(g);
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let xv = &nodes[x.0].value;
                let wv = &nodes[w.0].value;
                let (out_dim, in_dim) = (wv.dim(0), wv.dim(1));
                if needs(*x) {
                    let dx = acc(grads, nodes, *x);
                    kernels::dense_backward(xv.data(), in_dim, wv.data(), out_dim, g.data(), Some(dx.data_mut()), None, None);
                }
                if needs(*w) {
                    let dw = acc(grads, nodes, *w);
                    kernels::dense_backward(xv.data(), in_dim, wv.data(), out_dim, g.data(), None, Some(dw.data_mut()), None);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let db = acc(grads, nodes, *b);
                        kernels::dense_backward(xv.data(), in_dim, wv.data(), out_dim, g.data(), None, None, Some(db.data_mut()));
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                norm,
                xhat,
                rstd,
            } => {
                let gv = nodes[gamma.0].value.data();
                let mut dx = vec![T::zero(); xhat.len()];
                let mut dg = vec![T::zero(); gv.len()];
                let mut db = vec![T::zero(); gv.len()];
                kernels::layer_norm_backward(*norm, gv, xhat, rstd, g.data(), &mut dx, &mut dg, &mut db);
                add_into(grads, nodes, *x, &dx);
                add_into(grads, nodes, *gamma, &dg);
                add_into(grads, nodes, *beta, &db);
            }
            Op::Prelu { x, alpha, inner } => {
                let xv = nodes[x.0].value.data();
                let a = nodes[alpha.0].value.data();
                let mut dx = vec![T::zero(); xv.len()];
                let mut da = vec![T::zero(); a.len()];
                for (i, (&xi, &gi)) in xv.iter().zip(g.data()).enumerate() {
                    let ch = (i / inner) % a.len();
                    if xi > T::zero() {
                        dx[i] = gi;
                    } else {
                        dx[i] = gi * a[ch];
                        da[ch] += gi * xi;
                    }
                }
                add_into(grads, nodes, *x, &dx);
                add_into(grads, nodes, *alpha, &da);
            }
            Op::Permute { x, perm } => {
                if needs(*x) {
                    let src = permute_sources(nodes[x.0].value.shape(), perm);
                    let dx = acc(grads, nodes, *x);
                    let d = dx.data_mut();
                    for (o, &s) in src.iter().enumerate() {
                        d[s] += g.data()[o];
                    }
                }
            }
            Op::Reshape(x) => {
                if needs(*x) {
                    let dx = acc(grads, nodes, *x);
                    for (a, &b) in dx.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            Op::Concat(a, b) => {
                let da_dim = *nodes[a.0].value.shape().last().unwrap();
                let db_dim = *nodes[b.0].value.shape().last().unwrap();
                let rows = g.len() / (da_dim + db_dim);
                let mut ga = Vec::with_capacity(rows * da_dim);
                let mut gb = Vec::with_capacity(rows * db_dim);
                for row in g.data().chunks_exact(da_dim + db_dim) {
                    ga.extend_from_slice(&row[..da_dim]);
                    gb.extend_from_slice(&row[da_dim..]);
                }
                add_into(grads, nodes, *a, &ga);
                add_into(grads, nodes, *b, &gb);
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                layout,
                reverse,
                gates,
                cells,
            } => self.lstm_backward(node, g, grads, (*x, *w_ih, *w_hh, *b), *layout, *reverse, gates, cells),
            Op::Attention {
                q,
                k,
                v,
                mask,
                scale,
                probs,
                stride,
            } => {
                let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
                let (batch, tq, dk) = (qv.dim(0), qv.dim(1), qv.dim(2));
                let (tk, dv) = (kv.dim(1), vv.dim(2));
                let mut dq = vec![T::zero(); qv.len()];
                let mut dk_ = vec![T::zero(); kv.len()];
                let mut dv_ = vec![T::zero(); vv.len()];
                let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), g.data());
                let mut dp = vec![T::zero(); *stride];
                for bi in 0..batch {
                    for i in 0..tq {
                        let r = mask.key_range(i, tk);
                        if r.is_empty() {
                            continue;
                        }
                        let p = &probs[(bi * tq + i) * stride..(bi * tq + i) * stride + r.len()];
                        let go = &gd[(bi * tq + i) * dv..(bi * tq + i + 1) * dv];
                        let mut weighted = T::zero();
                        for (j, kj) in r.clone().enumerate() {
                            let vrow = (bi * tk + kj) * dv;
                            axpy_into(&mut dv_[vrow..vrow + dv], p[j], go);
                            dp[j] = kernels::dot(go, &vd[vrow..vrow + dv]);
                            weighted += p[j] * dp[j];
                        }
                        let qrow = (bi * tq + i) * dk;
                        for (j, kj) in r.clone().enumerate() {
                            let ds = p[j] * (dp[j] - weighted) * *scale;
                            let krow = (bi * tk + kj) * dk;
                            axpy_into(&mut dq[qrow..qrow + dk], ds, &kd[krow..krow + dk]);
                            axpy_into(&mut dk_[krow..krow + dk], ds, &qd[qrow..qrow + dk]);
                        }
                    }
                }
                add_into(grads, nodes, *q, &dq);
                add_into(grads, nodes, *k, &dk_);
                add_into(grads, nodes, *v, &dv_);
            }
            Op::Film { z, gb } => {
                let zv = nodes[z.0].value.data();
                let gbv = nodes[gb.0].value.data();
                let dim = *nodes[z.0].value.shape().last().unwrap();
                let mut dz = vec![T::zero(); zv.len()];
                let mut dgb = vec![T::zero(); gbv.len()];
                for r in 0..zv.len() / dim {
                    for j in 0..dim {
                        let gi = g.data()[r * dim + j];
                        dz[r * dim + j] = gi * gbv[r * 2 * dim + j];
                        dgb[r * 2 * dim + j] = gi * zv[r * dim + j];
                        dgb[r * 2 * dim + dim + j] = gi;
                    }
                }
                add_into(grads, nodes, *z, &dz);
                add_into(grads, nodes, *gb, &dgb);
            }
            Op::Conv1d { x, w, b } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let (frames, batch, cin) = (xv.dim(0), xv.dim(1), xv.dim(2));
                let (cout, k) = (wv.dim(0), wv.dim(2));
                let mut dx = vec![T::zero(); xv.len()];
                let mut dw = vec![T::zero(); wv.len()];
                let mut db = vec![T::zero(); cout];
                let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
                for t in 0..frames {
                    for n in 0..batch {
                        for o in 0..cout {
                            let gi = gd[(t * batch + n) * cout + o];
                            db[o] += gi;
                            for j in 0..k {
                                let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                                for c in 0..cin {
                                    let xi = (src * batch + n) * cin + c;
                                    let wi = (o * cin + c) * k + j;
                                    dx[xi] += gi * wd[wi];
                                    dw[wi] += gi * xd[xi];
                                }
                            }
                        }
                    }
                }
                add_into(grads, nodes, *x, &dx);
                add_into(grads, nodes, *w, &dw);
                add_into(grads, nodes, *b, &db);
            }
            Op::Shift { x, frames } => {
                if needs(*x) {
                    let total = g.dim(0);
                    let per = g.len() / total.max(1);
                    let dx = acc(grads, nodes, *x);
                    if *frames < total {
                        let n = (total - frames) * per;
                        for (a, &b) in dx.data_mut()[..n].iter_mut().zip(&g.data()[frames * per..]) {
                            *a += b;
                        }
                    }
                }
            }
            Op::ScaleLast { x, s } => {
                let xv = nodes[x.0].value.data();
                let sv = nodes[s.0].value.data();
                let d = sv.len();
                let mut dx = vec![T::zero(); xv.len()];
                let mut ds = vec![T::zero(); d];
                for (i, (&xi, &gi)) in xv.iter().zip(g.data()).enumerate() {
                    dx[i] = gi * sv[i % d];
                    ds[i % d] += gi * xi;
                }
                add_into(grads, nodes, *x, &dx);
                add_into(grads, nodes, *s, &ds);
            }
            Op::MeanRows(x) => {
                if needs(*x) {
                    let d = g.len();
                    let rows = nodes[x.0].value.len() / d;
                    let inv = T::one() / T::from_usize(rows.max(1));
                    let dx = acc(grads, nodes, *x);
                    for row in dx.data_mut().chunks_exact_mut(d) {
                        for (a, &b) in row.iter_mut().zip(g.data()) {
                            *a += b * inv;
                        }
                    }
                }
            }
            Op::Istft { x, stft, channels } => {
                if needs(*x) {
                    let xs = nodes[x.0].value.shape();
                    let (frames, f) = (xs[0], xs[1]);
                    let k2 = 2 * channels;
                    let cfg = stft.config();
                    let (win, hop) = (cfg.window_len, cfg.hop_len);
                    let len = g.dim(1);
                    let last = frames - 1;
                    let inv_env: Vec<T> = (0..len)
                        .map(|n| {
                            let e = stft.envelope_at(n, last);
                            if e > T::lit(1e-10) {
                                T::one() / e
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let dx = acc(grads, nodes, *x);
                    let d = dx.data_mut();
                    let mut gf = vec![T::zero(); win];
                    let mut gre = vec![T::zero(); f];
                    let mut gim = vec![T::zero(); f];
                    for c in 0..*channels {
                        let gc = &g.data()[c * len..(c + 1) * len];
                        for t in 0..frames {
                            for m in 0..win {
                                gf[m] = gc[t * hop + m] * inv_env[t * hop + m];
                            }
                            stft.synthesize_frame_adjoint(&gf, &mut gre, &mut gim);
                            for b in 0..f {
                                d[(t * f + b) * k2 + c] += gre[b];
                                d[(t * f + b) * k2 + channels + c] += gim[b];
                            }
                        }
                    }
                }
            }
            Op::NegSiSdr {
                est,
                reference,
                region,
                pairs,
            } => {
                if needs(*est) {
                    let ev = &nodes[est.0].value;
                    let len = ev.dim(1);
                    let upstream = g.data()[0].as_f64();
                    let factor = -upstream / pairs.len() as f64;
                    let dx = acc(grads, nodes, *est);
                    for &(e, r) in pairs {
                        let est_ch = &ev.data()[e * len + region.start..e * len + region.end];
                        let ref_ch = &reference[r][region.clone()];
                        let grad = si_sdr_grad(est_ch, ref_ch);
                        let d = &mut dx.data_mut()[e * len + region.start..e * len + region.end];
                        for (a, gv) in d.iter_mut().zip(grad) {
                            *a += T::lit(gv * factor);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        (x, w_ih, w_hh, b): (Var, Var, Var, Var),
        layout: SeqLayout,
        reverse: bool,
        gates: &[T],
        cells: &[T],
    ) {
        let nodes = &self.nodes;
        let xv = &nodes[x.0].value;
        let (steps, batch) = layout.dims(xv.shape());
        let in_dim = xv.dim(2);
        let wi = nodes[w_ih.0].value.data();
        let wh = nodes[w_hh.0].value.data();
        let hid = nodes[w_hh.0].value.dim(1);
        let y = node.value.data();
        let mut dx = vec![T::zero(); xv.len()];
        let mut dwi = vec![T::zero(); wi.len()];
        let mut dwh = vec![T::zero(); wh.len()];
        let mut db = vec![T::zero(); 4 * hid];
        let zeros = vec![T::zero(); hid];
        let mut dh = vec![T::zero(); hid];
        let mut dc = vec![T::zero(); hid];
        let mut dh_prev = vec![T::zero(); hid];
        let mut dc_prev = vec![T::zero(); hid];
        let mut dpre = vec![T::zero(); 4 * hid];
        let order = |p: usize| if reverse { steps - 1 - p } else { p };
        for n in 0..batch {
            let mut dh_next = vec![T::zero(); hid];
            dc.fill(T::zero());
            for p in (0..steps).rev() {
                let s = order(p);
                let row = layout.row(s, n, steps, batch);
                let slot = s * batch + n;
                let (h_prev, c_prev) = if p > 0 {
                    let sp = order(p - 1);
                    let rp = layout.row(sp, n, steps, batch);
                    let slotp = sp * batch + n;
                    (&y[rp * hid..(rp + 1) * hid], &cells[slotp * hid..(slotp + 1) * hid])
                } else {
                    (&zeros[..], &zeros[..])
                };
                for j in 0..hid {
                    dh[j] = g.data()[row * hid + j] + dh_next[j];
                }
                kernels::lstm_cell_backward(
                    &xv.data()[row * in_dim..(row + 1) * in_dim],
                    h_prev,
                    c_prev,
                    &gates[slot * 4 * hid..(slot + 1) * 4 * hid],
                    &cells[slot * hid..(slot + 1) * hid],
                    wi,
                    wh,
                    &dh,
                    &dc,
                    &mut dpre,
                    &mut dx[row * in_dim..(row + 1) * in_dim],
                    &mut dh_prev,
                    &mut dc_prev,
                    &mut dwi,
                    &mut dwh,
                    &mut db,
                );
                core::mem::swap(&mut dh_next, &mut dh_prev);
                core::mem::swap(&mut dc, &mut dc_prev);
            }
        }
        add_into(grads, nodes, x, &dx);
        add_into(grads, nodes, w_ih, &dwi);
        add_into(grads, nodes, w_hh, &dwh);
        add_into(grads, nodes, b, &db);
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "parameter",
        Op::Add(..) => "add",
        Op::Dense { .. } => "dense",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Prelu { .. } => "prelu",
        Op::Permute { .. } => "permute",
        Op::Reshape(_) => "reshape",
        Op::Concat(..) => "concat",
        Op::Lstm { .. } => "lstm",
        Op::Attention { .. } => "attention",
        Op::Film { .. } => "film",
        Op::Conv1d { .. } => "causal_conv1d",
        Op::Shift { .. } => "shift",
        Op::ScaleLast { .. } => "scale",
        Op::MeanRows(_) => "mean",
        Op::Istft { .. } => "istft",
        Op::NegSiSdr { .. } => "si_sdr_loss",
    }
}

fn acc<'g, T: Real>(grads: &'g mut [Option<Tensor<T>>], nodes: &[Node<T>], v: Var) -> &'g mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()))
}

fn add_into<T: Real>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], v: Var, delta: &[T]) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let t = acc(grads, nodes, v);
    for (a, &b) in t.data_mut().iter_mut().zip(delta) {
        *a += b;
    }
}

#[inline]
fn axpy_into<T: Real>(y: &mut [T], a: T, x: &[T]) {
    kernels::axpy(y, a, x)
}

/// For each output position of a permutation, the linear index it reads.
fn permute_sources(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let nd = shape.len();
    let mut strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let total = numel(shape);
    let mut src = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..total {
        src.push(offset);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += out_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= out_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    src
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    frames: usize,
    batch: usize,
    cin: usize,
    cout: usize,
    k: usize,
    out: &mut [T],
) {
    for t in 0..frames {
        for n in 0..batch {
            for o in 0..cout {
                let mut s = b[o];
                for j in 0..k {
                    let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                    for c in 0..cin {
                        s += w[(o * cin + c) * k + j] * x[(src * batch + n) * cin + c];
                    }
                }
                out[(t * batch + n) * cout + o] = s;
            }
        }
    }
}

/// Gradient of SI-SDR (dB) with respect to the estimate; zero when capped.
pub(crate) fn si_sdr_grad<T: Real>(estimate: &[T], reference: &[T]) -> Vec<f64> {
    let (mut ss, mut es) = (0.0f64, 0.0f64);
    for (&e, &s) in estimate.iter().zip(reference) {
        ss += s.as_f64() * s.as_f64();
        es += e.as_f64() * s.as_f64();
    }
    let alpha = es / ss;
    let mut tt = 0.0;
    let mut rr = 0.0;
    for (&e, &s) in estimate.iter().zip(reference) {
        let t = alpha * s.as_f64();
        let r = e.as_f64() - t;
        tt += t * t;
        rr += r * r;
    }
    let db = crate::dsp::ratio_db(tt, rr);
    if ss == 0.0 || db.abs() >= crate::dsp::SI_SDR_CAP_DB {
        return vec![0.0; estimate.len()];
    }
    let c = 10.0 / core::f64::consts::LN_10;
    estimate
        .iter()
        .zip(reference)
        .map(|(&e, &s)| {
            let t = alpha * s.as_f64();
            let r = e.as_f64() - t;
            c * (2.0 * t / tt - 2.0 * r / rr)
        })
        .collect()
}
