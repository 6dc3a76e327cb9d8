//! Streaming evaluation of trained models on corpus files.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use kboost_core::dsp::{AudioSignal, Stft};
use kboost_core::gridnet::features_to_spec;
use kboost_core::numerics::Graph;
use kboost_core::runtime::{run_session, TickDelays};
use kboost_core::synth::Task;
use kboost_core::train::{neg_mean_si_sdr, pit_value, Baseline, Boosted, Example};
use kboost_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_item, ManifestRow};
use crate::error::{Error, Result};
use crate::report::FileMetrics;

/// What is scored against the references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Estimate {
    /// Output of the model streamed chunk by chunk.
    Model,
    /// The unprocessed mixture (each speaker slot gets the mixture).
    Mixture,
    /// The references themselves.
    Reference,
}

impl Estimate {
    pub fn name(&self) -> &'static str {
        match self {
            Estimate::Model => "model",
            Estimate::Mixture => "mixture",
            Estimate::Reference => "reference",
        }
    }
}

/// A model ready for inference in f32.
pub enum Runner {
    Boosted { model: Boosted<f32>, delays: TickDelays },
    Baseline { model: Baseline<f32> },
}

impl Runner {
    /// `[T, F, 2K]` output for one example. Boosted pairs run through the
    /// two-node session; baselines are causal, so one offline pass is the
    /// streamed output.
    pub fn run(&self, ex: &Example<f32>) -> Result<Tensor<f32>> {
        match self {
            Runner::Boosted { model, delays } => {
                Ok(run_session(&model.sys, &model.params, &ex.input, None, ex.enrollment.as_ref(), *delays)?.output)
            }
            Runner::Baseline { model } => {
                use kboost_core::train::Trainable;
                let mut g = Graph::new();
                let out = model.output(&mut g, ex)?;
                Ok(g.value(out).clone())
            }
        }
    }
}

/// Mean SI-SDR of `est` channels (`speaker * 2 + ear`) over `region`, with
/// the best speaker assignment for separation.
pub fn score(task: Task, est: &[Vec<f64>], refs: &[Vec<f64>], region: std::ops::Range<usize>) -> Result<f64> {
    Ok(match task {
        Task::Ss => -pit_value(est, refs, region)?.0,
        Task::Se | Task::Tse => -neg_mean_si_sdr(est, refs, region, &[(0, 0), (1, 1)])?,
    })
}

/// Time-domain channels of a `[T, F, 2K]` output.
pub fn synthesize(out: &Tensor<f32>, stft: &Stft<f64>) -> Result<Vec<Vec<f64>>> {
    let spec = features_to_spec(&out.cast::<f64>(), stft.config())?;
    Ok(stft.istft(&spec)?.into_channels())
}

fn mixture_slots(task: Task, mixture: &AudioSignal<f64>, len: usize) -> Vec<Vec<f64>> {
    let ears: Vec<Vec<f64>> = (0..2).map(|c| mixture.channel(c)[..len].to_vec()).collect();
    match task {
        Task::Ss => ears.iter().chain(ears.iter()).cloned().collect(),
        Task::Se | Task::Tse => ears,
    }
}

pub fn evaluate_row(
    dir: &Path,
    row: &ManifestRow,
    task: Task,
    stft: &Stft<f64>,
    estimate: Estimate,
    runner: Option<&Runner>,
) -> Result<FileMetrics> {
    let item = load_item(dir, row)?;
    let ex = Example::from_signals(row.recipe.id.clone(), &item.mixture, &item.references, item.enrollment.as_ref(), task, stft)?;
    let len = ex.references[0].len();
    let mix = mixture_slots(task, &item.mixture, len);
    let est = match estimate {
        Estimate::Mixture => mix.clone(),
        Estimate::Reference => ex.references.clone(),
        Estimate::Model => {
            let runner = runner.ok_or_else(|| kboost_core::Error::Config("model estimate needs a checkpoint".into()))?;
            let mut ch = synthesize(&runner.run(&ex.cast())?, stft)?;
            ch.iter_mut().for_each(|c| c.truncate(len));
            ch
        }
    };
    let si_sdr = score(task, &est, &ex.references, ex.region.clone())?;
    let base = score(task, &mix, &ex.references, ex.region.clone())?;
    Ok(FileMetrics {
        id: row.recipe.id.clone(),
        si_sdr,
        si_sdri: si_sdr - base,
    })
}

/// Scores every row on `jobs` threads; rows come back in input order.
pub fn evaluate_rows(
    dir: &Path,
    rows: &[ManifestRow],
    task: Task,
    stft: &Stft<f64>,
    estimate: Estimate,
    runner: Option<&Runner>,
    jobs: usize,
) -> Result<Vec<FileMetrics>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FileMetrics>>>> = Mutex::new((0..rows.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= rows.len() {
                    break;
                }
                let r = evaluate_row(dir, &rows[i], task, stft, estimate, runner);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(Error::Core(kboost_core::Error::Protocol("row skipped".into())))))
        .collect()
}
