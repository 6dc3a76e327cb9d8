//! Slice-level forward and backward kernels.
//!
//! The autodiff tape and the streaming inference path both call these, so
//! the two evaluate identical arithmetic in identical order.

use core::ops::Range;

use crate::real::Real;

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out[r] = w · x[r] + b` for every row; `w` is `out_dim × in_dim`.
pub fn dense_forward<T: Real>(x: &[T], in_dim: usize, w: &[T], b: Option<&[T]>, out_dim: usize, out: &mut [T]) {
    let rows = x.len() / in_dim;
    debug_assert_eq!(out.len(), rows * out_dim);
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let yr = &mut out[r * out_dim..(r + 1) * out_dim];
        for (o, y) in yr.iter_mut().enumerate() {
            let bias = b.map_or(T::zero(), |b| b[o]);
            *y = bias + dot(&w[o * in_dim..(o + 1) * in_dim], xr);
        }
    }
}

/// Accumulates gradients of `dense_forward`.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    in_dim: usize,
    w: &[T],
    out_dim: usize,
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let rows = x.len() / in_dim;
    if let Some(dx) = dx {
        for r in 0..rows {
            let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                let g = dy[r * out_dim + o];
                if g != T::zero() {
                    axpy(dxr, g, &w[o * in_dim..(o + 1) * in_dim]);
                }
            }
        }
    }
    if let Some(dw) = dw {
        for r in 0..rows {
            let xr = &x[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                let g = dy[r * out_dim + o];
                if g != T::zero() {
                    axpy(&mut dw[o * in_dim..(o + 1) * in_dim], g, xr);
                }
            }
        }
    }
    if let Some(db) = db {
        for r in 0..rows {
            for o in 0..out_dim {
                db[o] += dy[r * out_dim + o];
            }
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes consecutive groups of `norm` elements. The affine parameters
/// cover the trailing `gamma.len()` elements (a multiple of `norm`) and repeat
/// over the leading dimensions.
pub fn layer_norm_forward<T: Real>(
    x: &[T],
    norm: usize,
    gamma: &[T],
    beta: &[T],
    out: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
) {
    let affine = gamma.len();
    let eps = T::lit(LAYER_NORM_EPS);
    let inv_n = T::one() / T::from_usize(norm);
    for (row, xr) in x.chunks_exact(norm).enumerate() {
        let mean = xr.iter().copied().sum::<T>() * inv_n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[row] = rs;
        let base = (row * norm) % affine;
        for j in 0..norm {
            let p = row * norm + j;
            let h = (xr[j] - mean) * rs;
            xhat[p] = h;
            out[p] = h * gamma[base + j] + beta[base + j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Real>(
    norm: usize,
    gamma: &[T],
    xhat: &[T],
    rstd: &[T],
    dy: &[T],
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let affine = gamma.len();
    let inv_n = T::one() / T::from_usize(norm);
    let mut dxhat = alloc::vec![T::zero(); norm];
    for row in 0..xhat.len() / norm {
        let base = (row * norm) % affine;
        let off = row * norm;
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for j in 0..norm {
            let g = dy[off + j];
            dgamma[base + j] += g * xhat[off + j];
            dbeta[base + j] += g;
            let d = g * gamma[base + j];
            dxhat[j] = d;
            m1 += d;
            m2 += d * xhat[off + j];
        }
        m1 *= inv_n;
        m2 *= inv_n;
        for j in 0..norm {
            dx[off + j] += rstd[row] * (dxhat[j] - m1 - xhat[off + j] * m2);
        }
    }
}

/// One LSTM step with gate order (input, forget, cell, output).
///
/// `w_ih` is `4H × in`, `w_hh` is `4H × H`, `b` is `4H`. `gates` receives the
/// post-activation gate values.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell<T: Real>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    w_ih: &[T],
    w_hh: &[T],
    b: &[T],
    gates: &mut [T],
    h_out: &mut [T],
    c_out: &mut [T],
) {
    let hid = h_prev.len();
    let in_dim = x.len();
    for r in 0..4 * hid {
        let pre = b[r] + dot(&w_ih[r * in_dim..(r + 1) * in_dim], x) + dot(&w_hh[r * hid..(r + 1) * hid], h_prev);
        gates[r] = if (2 * hid..3 * hid).contains(&r) { pre.tanh() } else { sigmoid(pre) };
    }
    for j in 0..hid {
        let (i, f, g, o) = (gates[j], gates[hid + j], gates[2 * hid + j], gates[3 * hid + j]);
        let c = f * c_prev[j] + i * g;
        c_out[j] = c;
        h_out[j] = o * c.tanh();
    }
}

/// Backward through one LSTM step. `dh`/`dc` are the gradients flowing into
/// this step's outputs; on return `dh_prev`/`dc_prev` hold the gradients for
/// the previous state, and `dx`, `dw_*`, `db` are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell_backward<T: Real>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    gates: &[T],
    c: &[T],
    w_ih: &[T],
    w_hh: &[T],
    dh: &[T],
    dc: &[T],
    dpre: &mut [T],
    dx: &mut [T],
    dh_prev: &mut [T],
    dc_prev: &mut [T],
    dw_ih: &mut [T],
    dw_hh: &mut [T],
    db: &mut [T],
) {
    let hid = h_prev.len();
    let in_dim = x.len();
    let one = T::one();
    for j in 0..hid {
        let (i, f, g, o) = (gates[j], gates[hid + j], gates[2 * hid + j], gates[3 * hid + j]);
        let tc = c[j].tanh();
        let d_o = dh[j] * tc;
        let dcell = dc[j] + dh[j] * o * (one - tc * tc);
        let d_i = dcell * g;
        let d_g = dcell * i;
        let d_f = dcell * c_prev[j];
        dc_prev[j] = dcell * f;
        dpre[j] = d_i * i * (one - i);
        dpre[hid + j] = d_f * f * (one - f);
        dpre[2 * hid + j] = d_g * (one - g * g);
        dpre[3 * hid + j] = d_o * o * (one - o);
    }
    dh_prev.iter_mut().for_each(|v| *v = T::zero());
    for r in 0..4 * hid {
        let d = dpre[r];
        if d == T::zero() {
            continue;
        }
        db[r] += d;
        axpy(dx, d, &w_ih[r * in_dim..(r + 1) * in_dim]);
        axpy(dh_prev, d, &w_hh[r * hid..(r + 1) * hid]);
        axpy(&mut dw_ih[r * in_dim..(r + 1) * in_dim], d, x);
        axpy(&mut dw_hh[r * hid..(r + 1) * hid], d, h_prev);
    }
}

/// Which keys a query may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMask {
    /// Every key; used only to inject a deliberate future leak.
    Full,
    /// Query `q` reads keys `[q - lag - span + 1, q - lag]`, never below `min_key`.
    Window { lag: usize, span: usize, min_key: usize },
}

impl AttnMask {
    /// Causal self-attention over the last `span` positions.
    pub fn causal(span: usize) -> Self {
        AttnMask::Window { lag: 0, span, min_key: 0 }
    }

    pub fn key_range(&self, q: usize, num_keys: usize) -> Range<usize> {
        match *self {
            AttnMask::Full => 0..num_keys,
            AttnMask::Window { lag, span, min_key } => {
                if q < lag || span == 0 {
                    return 0..0;
                }
                let hi = (q - lag + 1).min(num_keys);
                let lo = (q - lag + 1).saturating_sub(span).max(min_key);
                if lo >= hi {
                    0..0
                } else {
                    lo..hi
                }
            }
        }
    }

    pub fn max_keys(&self, num_keys: usize) -> usize {
        match *self {
            AttnMask::Full => num_keys,
            AttnMask::Window { span, .. } => span.min(num_keys),
        }
    }
}

/// Scaled dot-product attention for one query over keys `0..n`.
///
/// Softmax uses max subtraction. With no keys the output is zero.
#[allow(clippy::too_many_arguments)]
pub fn attend<'a, T: Real, K, V>(
    q: &[T],
    n: usize,
    key: K,
    value: V,
    scale: T,
    out: &mut [T],
    probs: &mut [T],
) where
    K: Fn(usize) -> &'a [T],
    V: Fn(usize) -> &'a [T],
{
    out.iter_mut().for_each(|v| *v = T::zero());
    if n == 0 {
        return;
    }
    let mut max = T::neg_infinity();
    for j in 0..n {
        let s = dot(q, key(j)) * scale;
        probs[j] = s;
        max = max.max(s);
    }
    let mut sum = T::zero();
    for p in probs.iter_mut().take(n) {
        *p = (*p - max).exp();
        sum += *p;
    }
    let inv = T::one() / sum;
    for j in 0..n {
        probs[j] *= inv;
        axpy(out, probs[j], value(j));
    }
}

/// Feature-wise modulation `gamma ⊙ z + beta`; `gb` rows hold `[gamma | beta]`.
pub fn film_forward<T: Real>(z: &[T], gb: &[T], dim: usize, out: &mut [T]) {
    for (r, zr) in z.chunks_exact(dim).enumerate() {
        let g = &gb[r * 2 * dim..r * 2 * dim + dim];
        let b = &gb[r * 2 * dim + dim..(r + 1) * 2 * dim];
        for j in 0..dim {
            out[r * dim + j] = g[j] * zr[j] + b[j];
        }
    }
}

#[inline]
pub fn prelu<T: Real>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x
    }
}
