use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};
use crate::gridnet::{add_in, dense_rows};
use crate::numerics::kernels::{self, AttnMask};
use crate::numerics::{add_const, add_uniform, mha_graph, Graph, MhaVars, ParamId, ParamStore, Var};
use crate::real::Real;
use crate::rng::SeededRng;

/// FiLM contextualization of delayed latents followed by per-bin
/// cross-attention from the current latent into the cached window.
#[derive(Debug, Clone)]
pub struct MergeModule {
    d: usize,
    hint_ch: usize,
    heads: usize,
    film_w: ParamId,
    film_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
}

impl MergeModule {
    pub fn new<T: Real>(
        name: &str,
        d: usize,
        hint_ch: usize,
        heads: usize,
        store: &mut ParamStore<T>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(config_err!("merge width {} not divisible by {} heads", d, heads));
        }
        let film_w = add_uniform(store, rng, &format!("{name}.film.w"), &[2 * d, hint_ch], hint_ch);
        // gamma starts at one, beta at zero: identity modulation of a zero hint
        let mut fb = vec![T::zero(); 2 * d];
        fb[..d].fill(T::one());
        let film_b = store.add(format!("{name}.film.b"), crate::Tensor::from_vec(&[2 * d], fb)?);
        let mut lin = |n: &str| add_uniform(store, rng, &format!("{name}.attn.{n}"), &[d, d], d);
        let (wq, wk, wv, wo) = (lin("wq"), lin("wk"), lin("wv"), lin("wo"));
        let mut bias = |n: &str| add_const(store, &format!("{name}.attn.{n}"), &[d], 0.0);
        let (bq, bk, bv) = (bias("bq"), bias("bk"), bias("bv"));
        Ok(Self {
            d,
            hint_ch,
            heads,
            film_w,
            film_b,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Offline merge over a whole sequence.
    ///
    /// `z`: `[T, F, D]` latent after block `j`; `hints`: `[T, F, 2K/P]`
    /// already shifted right by `c` with zero fill. Position `i` may read the
    /// contextual representations of chunks `i-c-v ..= i-c`.
    pub fn forward<T: Real>(&self, s: &ParamStore<T>, g: &mut Graph<T>, z: Var, hints: Var, c: usize, v: usize) -> Result<Var> {
        let mask = AttnMask::Window {
            lag: 0,
            span: v + 1,
            min_key: c,
        };
        self.forward_masked(s, g, z, hints, c, mask)
    }

    /// [`forward`](Self::forward) with an explicit attention mask over chunk positions.
    pub fn forward_masked<T: Real>(
        &self,
        s: &ParamStore<T>,
        g: &mut Graph<T>,
        z: Var,
        hints: Var,
        c: usize,
        mask: AttnMask,
    ) -> Result<Var> {
        let (fw, fb) = (g.param(s, self.film_w), g.param(s, self.film_b));
        let gb = g.dense(hints, fw, Some(fb))?;
        let delayed = g.shift_time(z, c)?;
        let ctx = g.film(delayed, gb)?;
        // attention runs along time independently per bin
        let q = g.permute(z, &[1, 0, 2])?;
        let kv = g.permute(ctx, &[1, 0, 2])?;
        let w = MhaVars {
            wq: g.param(s, self.wq),
            bq: Some(g.param(s, self.bq)),
            wk: g.param(s, self.wk),
            bk: Some(g.param(s, self.bk)),
            wv: g.param(s, self.wv),
            bv: Some(g.param(s, self.bv)),
            wo: g.param(s, self.wo),
        };
        let y = mha_graph(g, q, kv, &w, self.heads, mask)?;
        let y = g.permute(y, &[1, 0, 2])?;
        g.add(z, y)
    }

    /// `gamma(E) * Z + beta(E)` for one frame (`z`: `[F, D]`, `hint`: `[F, 2K/P]`).
    pub fn contextualize<T: Real>(&self, s: &ParamStore<T>, z: &[T], hint: &[T]) -> Vec<T> {
        let gb = dense_rows(hint, self.hint_ch, s.get(self.film_w).data(), Some(s.get(self.film_b).data()), 2 * self.d);
        let mut out = vec![T::zero(); z.len()];
        kernels::film_forward(z, &gb, self.d, &mut out);
        out
    }

    pub fn new_cache<T: Real>(&self, c: usize, v: usize) -> ContextCache<T> {
        ContextCache {
            c,
            v,
            latents: VecDeque::new(),
            entries: VecDeque::new(),
            next_chunk: 0,
        }
    }

    /// Streaming merge for chunk `i`. `z` (`[F, D]`) is updated in place.
    /// `hint` must be the embedding of chunk `i - c` and be present exactly
    /// when `i >= c`.
    pub fn step<T: Real>(&self, s: &ParamStore<T>, cache: &mut ContextCache<T>, z: &mut [T], hint: Option<&[T]>) -> Result<()> {
        let i = cache.next_chunk;
        cache.next_chunk += 1;
        cache.latents.push_back((i, z.to_vec()));
        match (hint, i >= cache.c) {
            (Some(h), true) => {
                let (src, zc) = cache.latents.pop_front().expect("just pushed");
                debug_assert_eq!(src + cache.c, i);
                let ctx = self.contextualize(s, &zc, h);
                let k = dense_rows(&ctx, self.d, s.get(self.wk).data(), Some(s.get(self.bk).data()), self.d);
                let v = dense_rows(&ctx, self.d, s.get(self.wv).data(), Some(s.get(self.bv).data()), self.d);
                cache.entries.push_back(CacheEntry { chunk: src, ctx, k, v });
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Protocol(format!("hint arrived at chunk {i}, before the delay of {} chunks elapsed", cache.c)));
            }
            (None, true) => {
                return Err(Error::Protocol(format!("hint for chunk {} missing at chunk {i}", i - cache.c)));
            }
        }
        while cache.entries.len() > cache.v + 1 {
            cache.entries.pop_front();
        }
        if !cache.entries.is_empty() {
            let (d, dh) = (self.d, self.d / self.heads);
            let bins = z.len() / d;
            let q = dense_rows(z, d, s.get(self.wq).data(), Some(s.get(self.bq).data()), d);
            let n = cache.entries.len();
            let scale = T::one() / T::from_usize(dh).sqrt();
            let mut ctx = vec![T::zero(); bins * d];
            let mut probs = vec![T::zero(); n];
            let entries = &cache.entries;
            for f in 0..bins {
                for h in 0..self.heads {
                    let lo = f * d + h * dh;
                    kernels::attend(
                        &q[lo..lo + dh],
                        n,
                        |j| &entries[j].k[lo..lo + dh],
                        |j| &entries[j].v[lo..lo + dh],
                        scale,
                        &mut ctx[lo..lo + dh],
                        &mut probs,
                    );
                }
            }
            let y = dense_rows(&ctx, d, s.get(self.wo).data(), None, d);
            add_in(z, &y);
        }
        // between chunks: c pending latents and v reusable contexts
        while cache.entries.len() > cache.v {
            cache.entries.pop_front();
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct CacheEntry<T> {
    chunk: usize,
    ctx: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
}

/// Per-merge streaming state: the small model's latents awaiting their hint
/// and the most recent contextual representations.
#[derive(Debug, Clone)]
pub struct ContextCache<T> {
    c: usize,
    v: usize,
    latents: VecDeque<(usize, Vec<T>)>,
    entries: VecDeque<CacheEntry<T>>,
    next_chunk: usize,
}

impl<T> ContextCache<T> {
    /// Entries held between chunks (pending latents plus contexts); at most `c + v`.
    pub fn occupancy(&self) -> usize {
        self.latents.len() + self.entries.len()
    }

    pub fn capacity(&self) -> usize {
        self.c + self.v
    }

    /// Chunk indices whose contextual representation is currently readable.
    pub fn context_chunks(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.chunk)
    }

    /// Contextual representation of `chunk`, if still cached.
    pub fn context(&self, chunk: usize) -> Option<&[T]> {
        self.entries.iter().find(|e| e.chunk == chunk).map(|e| &e.ctx[..])
    }
}
