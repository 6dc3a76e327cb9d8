use alloc::vec::Vec;
use core::ops::Range;

use crate::dsp::si_sdr;
use crate::error::{shape_err, Result};
use crate::numerics::{Graph, Var};
use crate::real::Real;

/// Ears per speaker in every output layout.
pub const EARS: usize = 2;

/// Speaker assignment: `perm[s]` is the reference speaker matched to output speaker `s`.
pub type Permutation = [usize; 2];

pub const IDENTITY: Permutation = [0, 1];
pub const SWAPPED: Permutation = [1, 0];

/// `(estimate channel, reference channel)` pairs for a speaker assignment;
/// channel index is `speaker * 2 + ear` and ears are never permuted.
pub fn pit_pairs(perm: Permutation) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4);
    for (s, &r) in perm.iter().enumerate() {
        for ear in 0..EARS {
            out.push((s * EARS + ear, r * EARS + ear));
        }
    }
    out
}

/// Negative mean SI-SDR over channel pairs, evaluated without a tape.
pub fn neg_mean_si_sdr<T: Real>(est: &[Vec<T>], reference: &[Vec<T>], region: Range<usize>, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(shape_err!("no channel pairs"));
    }
    let mut total = 0.0;
    for &(e, r) in pairs {
        let (Some(ec), Some(rc)) = (est.get(e), reference.get(r)) else {
            return Err(shape_err!("pair ({}, {}) out of range", e, r));
        };
        if ec.len() < region.end || rc.len() < region.end {
            return Err(shape_err!("region {:?} beyond signal", region));
        }
        total += si_sdr(&ec[region.clone()], &rc[region.clone()])?;
    }
    Ok(-total / pairs.len() as f64)
}

/// Best speaker assignment and its loss; ties keep the identity.
pub fn pit_value<T: Real>(est: &[Vec<T>], reference: &[Vec<T>], region: Range<usize>) -> Result<(f64, Permutation)> {
    let a = neg_mean_si_sdr(est, reference, region.clone(), &pit_pairs(IDENTITY))?;
    let b = neg_mean_si_sdr(est, reference, region, &pit_pairs(SWAPPED))?;
    Ok(if b < a { (b, SWAPPED) } else { (a, IDENTITY) })
}

/// Per-ear SI-SDR loss for single-target tasks; `est` is `[2, L]`.
pub fn loss_sisdr<T: Real>(g: &mut Graph<T>, est: Var, reference: &[Vec<T>], region: Range<usize>) -> Result<Var> {
    g.neg_si_sdr(est, reference, region, &[(0, 0), (1, 1)])
}

/// Permutation-invariant loss over two speakers; `est` is `[4, L]`.
pub fn loss_pit<T: Real>(g: &mut Graph<T>, est: Var, reference: &[Vec<T>], region: Range<usize>) -> Result<(Var, Permutation)> {
    let shape = g.shape(est).to_vec();
    if shape.len() != 2 || shape[0] != 4 || reference.len() != 4 {
        return Err(shape_err!("pit needs 4 estimate and 4 reference channels, got {:?} / {}", shape, reference.len()));
    }
    let rows: Vec<Vec<T>> = g.value(est).data().chunks_exact(shape[1]).map(|c| c.to_vec()).collect();
    let (_, perm) = pit_value(&rows, reference, region.clone())?;
    Ok((g.neg_si_sdr(est, reference, region, &pit_pairs(perm))?, perm))
}
