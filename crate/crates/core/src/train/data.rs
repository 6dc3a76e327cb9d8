use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::dsp::{AudioSignal, Stft};
use crate::error::{shape_err, Result};
use crate::gridnet::spec_to_features;
use crate::real::Real;
use crate::synth::{Mixture, Task};
use crate::tensor::Tensor;

/// One training or evaluation item in model layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub id: String,
    /// `[T, F, 4]` mixture features.
    pub input: Tensor<T>,
    /// Reference channels (`speaker * 2 + ear`), trimmed to the synthesis length.
    pub references: Vec<Vec<T>>,
    /// `[T_e, F, 4]` enrollment features for target speaker extraction.
    pub enrollment: Option<Tensor<T>>,
    /// Samples over which losses and metrics are measured.
    pub region: Range<usize>,
}

impl Example<f64> {
    /// Features and targets of a rendered mixture. SS keeps both speakers,
    /// SE and TSE keep the first (target) source.
    pub fn from_mixture(id: impl Into<String>, m: &Mixture, task: Task, stft: &Stft<f64>) -> Result<Self> {
        Self::from_signals(id, &m.mixture, &m.references, m.enrollment.as_ref(), task, stft)
    }

    pub fn from_signals(
        id: impl Into<String>,
        mixture: &AudioSignal<f64>,
        references: &[AudioSignal<f64>],
        enrollment: Option<&AudioSignal<f64>>,
        task: Task,
        stft: &Stft<f64>,
    ) -> Result<Self> {
        let spec = stft.stft(mixture)?;
        let frames = spec.frames;
        let cfg = stft.config();
        let len = cfg.output_len(frames);
        let speakers = match task {
            Task::Ss => 2,
            Task::Se | Task::Tse => 1,
        };
        if references.len() < speakers {
            return Err(shape_err!("{} references for task {}", references.len(), task.name()));
        }
        let refs = references[..speakers]
            .iter()
            .flat_map(|r| (0..2).map(move |c| r.channel(c)[..len].to_vec()))
            .collect();
        let enrollment = match (task, enrollment) {
            (Task::Tse, Some(e)) => Some(spec_to_features(&stft.stft(e)?)),
            (Task::Tse, None) => return Err(shape_err!("target speaker extraction needs an enrollment signal")),
            _ => None,
        };
        Ok(Self {
            id: id.into(),
            input: spec_to_features(&spec),
            references: refs,
            enrollment,
            region: cfg.interior(frames),
        })
    }
}

impl<T: Real> Example<T> {
    pub fn cast<U: Real>(&self) -> Example<U> {
        Example {
            id: self.id.clone(),
            input: self.input.cast(),
            references: self.references.iter().map(|r| r.iter().map(|v| U::lit(v.as_f64())).collect()).collect(),
            enrollment: self.enrollment.as_ref().map(|e| e.cast()),
            region: self.region.clone(),
        }
    }

    pub fn frames(&self) -> usize {
        self.input.shape()[0]
    }
}
