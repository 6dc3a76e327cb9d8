use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    /// Every chunk after the probe replaced by noise on both devices.
    FutureInput,
    /// The remote copy of chunks the probe tick may not depend on perturbed.
    RemotePerturbation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: AuditKind,
    /// First output tick that changed.
    pub tick: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub probe: usize,
    pub c: usize,
    /// First chunk whose remote copy was perturbed.
    pub perturbed_from: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.violations.first() {
            None => Ok(self),
            Some(v) => Err(Error::Causality {
                tick: v.tick,
                detail: v.detail.clone(),
            }),
        }
    }
}

fn perturb<T: Real>(x: &Tensor<T>, from: usize, seed: u64) -> Tensor<T> {
    let per: usize = x.shape()[1..].iter().product();
    let mut y = x.clone();
    let mut r = rng::seeded(seed);
    for v in &mut y.data_mut()[(from * per).min(x.len())..] {
        *v = T::lit(rng::gaussian(&mut r));
    }
    y
}

fn first_difference<T: Real>(a: &Tensor<T>, b: &Tensor<T>, upto: usize) -> Option<usize> {
    let per: usize = a.shape()[1..].iter().product();
    (0..=upto).find(|&t| {
        let r = t * per..(t + 1) * per;
        a.data()[r.clone()].iter().zip(&b.data()[r]).any(|(x, y)| x.as_f64().to_bits() != y.as_f64().to_bits())
    })
}

/// Checks the real-time information contract of `pipeline`, a map from the
/// local input and the remote node's copy (both `[T, F, 4]`) to the output
/// `[T, F, 2K]`. Outputs up to `probe` must be bit-identical when the future
/// is replaced by noise, and when the remote copy of chunks after
/// `probe - c` is perturbed.
pub fn causality_audit<T, P>(mut pipeline: P, input: &Tensor<T>, c: usize, probe: usize, seed: u64) -> Result<AuditReport>
where
    T: Real,
    P: FnMut(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
{
    if input.shape().len() != 3 || probe >= input.shape()[0] {
        return Err(shape_err!("probe tick {} outside input {:?}", probe, input.shape()));
    }
    let base = pipeline(input, input)?;
    let mut violations = Vec::new();

    let noisy = perturb(input, probe + 1, seed);
    let out = pipeline(&noisy, &noisy)?;
    if let Some(t) = first_difference(&base, &out, probe) {
        violations.push(Violation {
            kind: AuditKind::FutureInput,
            tick: t,
            detail: format!("output {t} changed when chunks after {probe} were replaced by noise"),
        });
    }

    let from = (probe + 1).saturating_sub(c);
    let remote = perturb(input, from, seed ^ 0x5eed);
    let out = pipeline(input, &remote)?;
    if let Some(t) = first_difference(&base, &out, probe) {
        violations.push(Violation {
            kind: AuditKind::RemotePerturbation,
            tick: t,
            detail: format!("output {t} changed when the remote copy of chunks from {from} was perturbed"),
        });
    }
    Ok(AuditReport {
        probe,
        c,
        perturbed_from: from,
        violations,
    })
}
