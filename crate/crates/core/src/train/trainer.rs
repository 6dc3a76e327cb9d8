use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::Example;
use super::loss::{loss_pit, loss_sisdr, Permutation};
use super::model::Trainable;
use super::optim::{clip_grad_norm, Adam, AdamConfig};
use super::schedule::{LrSchedule, ScheduleEvent};
use crate::dsp::{Stft, StftConfig};
use crate::error::{config_err, Error, Result};
use crate::numerics::{Graph, Var};
use crate::real::Real;
use crate::rng;
use crate::synth::Task;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_factor")]
    pub factor: f64,
    pub epochs: usize,
    #[serde(default)]
    pub freeze_large: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

fn default_batch() -> usize {
    8
}
fn default_clip() -> f64 {
    1.0
}
fn default_patience() -> usize {
    4
}
fn default_factor() -> f64 {
    0.5
}

impl TrainConfig {
    /// Settings for a model trained alone.
    pub fn baseline(task: Task) -> Self {
        Self {
            task,
            lr: 2e-3,
            batch_size: 8,
            clip_norm: 1.0,
            patience: 4,
            factor: 0.5,
            epochs: 100,
            freeze_large: false,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }

    /// Settings for joint training of a boosted pair.
    pub fn joint(task: Task) -> Self {
        Self {
            lr: 1e-3,
            epochs: 20,
            ..Self::baseline(task)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip_norm > 0.0) {
            return Err(config_err!("learning rate and clip norm must be positive"));
        }
        if self.patience == 0 || !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(config_err!("schedule needs patience >= 1 and factor in (0, 1]"));
        }
        Ok(())
    }
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_si_snr: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub event: ScheduleEvent,
    /// Largest pre-clip gradient norm per parameter group.
    pub grad_norms: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn best_val(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_si_snr).fold(None, |a, v| Some(a.map_or(v, |a: f64| a.max(v))))
    }
}

/// Loss of one example: synthesis of the output spectrum, then SI-SDR
/// (per ear) or its permutation-invariant form for separation.
pub fn example_loss<T: Real>(
    g: &mut Graph<T>,
    out: Var,
    ex: &Example<T>,
    task: Task,
    stft: &Stft<T>,
) -> Result<(Var, Option<Permutation>)> {
    let est = g.istft(out, stft)?;
    match task {
        Task::Ss => loss_pit(g, est, &ex.references, ex.region.clone()).map(|(l, p)| (l, Some(p))),
        Task::Se | Task::Tse => loss_sisdr(g, est, &ex.references, ex.region.clone()).map(|l| (l, None)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub grad_norms: Vec<f64>,
    pub steps: usize,
}

/// Mini-batch trainer: ordered gradient accumulation, clipping, Adam and the
/// plateau schedule.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    stft: Stft<T>,
    adam: Adam,
    schedule: LrSchedule,
    epoch: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainConfig, stft: StftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            stft: Stft::new(stft)?,
            adam: Adam::new(cfg.adam),
            schedule: LrSchedule::new(cfg.lr, cfg.patience, cfg.factor),
            epoch: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr
    }

    pub fn stft(&self) -> &Stft<T> {
        &self.stft
    }

    /// One pass over `data` in a seeded order.
    pub fn train_epoch<M: Trainable<T>>(&mut self, model: &mut M, data: &[Example<T>]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(config_err!("empty training set"));
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::derive(self.cfg.seed, epoch as u64));
        let mut total = 0.0;
        let mut norms = vec![0.0f64; model.stores().len()];
        let mut steps = 0;
        for batch in order.chunks(self.cfg.batch_size) {
            for s in model.stores_mut() {
                s.zero_grad();
            }
            for &i in batch {
                let ex = &data[i];
                let mut g = Graph::new();
                let out = model.output(&mut g, ex)?;
                let (loss, _) = example_loss(&mut g, out, ex, self.cfg.task, &self.stft)?;
                let value = g.value(loss).data()[0].as_f64();
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("loss {value} on {}", ex.id),
                    });
                }
                total += value;
                let grads = g.backward(loss)?;
                for s in model.stores_mut() {
                    s.accumulate(&grads);
                }
            }
            let mut stores = model.stores_mut();
            let inv = T::lit(1.0 / batch.len() as f64);
            for s in stores.iter_mut() {
                s.scale_grads(inv);
            }
            for (n, s) in norms.iter_mut().zip(stores.iter()) {
                *n = n.max(libm::sqrt(s.grad_norm_sq()));
            }
            let norm = clip_grad_norm(&mut stores, self.cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("gradient norm {norm}"),
                });
            }
            self.adam.step(&mut stores, self.schedule.lr);
            steps += 1;
        }
        Ok(EpochStats {
            mean_loss: total / data.len() as f64,
            grad_norms: norms,
            steps,
        })
    }

    /// Mean SI-SNR in dB over `data` (best permutation for separation).
    pub fn evaluate<M: Trainable<T>>(&self, model: &M, data: &[Example<T>]) -> Result<f64> {
        if data.is_empty() {
            return Err(config_err!("empty evaluation set"));
        }
        let mut total = 0.0;
        for ex in data {
            let mut g = Graph::new();
            let out = model.output(&mut g, ex)?;
            let (loss, _) = example_loss(&mut g, out, ex, self.cfg.task, &self.stft)?;
            total -= g.value(loss).data()[0].as_f64();
        }
        Ok(total / data.len() as f64)
    }

    /// Trains for the configured number of epochs, validating after each.
    /// `on_epoch` sees every log record together with the model it describes.
    pub fn fit<M: Trainable<T>>(
        &mut self,
        model: &mut M,
        train: &[Example<T>],
        val: &[Example<T>],
        mut on_epoch: impl FnMut(&EpochRecord, &M),
    ) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        for _ in 0..self.cfg.epochs {
            let lr = self.schedule.lr;
            let stats = self.train_epoch(model, train)?;
            let val_si_snr = self.evaluate(model, val)?;
            let (_, event) = self.schedule.step(val_si_snr);
            let rec = EpochRecord {
                epoch: self.epoch,
                train_loss: stats.mean_loss,
                val_si_snr,
                lr,
                event,
                grad_norms: model.store_names().into_iter().map(String::from).zip(stats.grad_norms).collect(),
            };
            on_epoch(&rec, model);
            log.records.push(rec);
        }
        Ok(log)
    }
}
