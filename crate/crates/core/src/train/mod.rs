//! Losses, permutation-invariant training, Adam with a plateau schedule,
//! and the training loops for baselines and boosted pairs.

mod data;
mod loss;
mod model;
mod optim;
mod schedule;
mod trainer;

#[cfg(test)]
mod tests;

pub use data::Example;
pub use loss::{loss_pit, loss_sisdr, neg_mean_si_sdr, pit_pairs, pit_value, Permutation, IDENTITY, SWAPPED};
pub use model::{Baseline, Boosted, Trainable};
pub use optim::{clip_grad_norm, grad_norm, Adam, AdamConfig};
pub use schedule::{LrSchedule, ScheduleEvent};
pub use trainer::{example_loss, EpochRecord, EpochStats, TrainConfig, TrainLog, Trainer};
