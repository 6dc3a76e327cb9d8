use serde::{Deserialize, Serialize};

/// Halves the learning rate when validation SI-SNR has not improved on its
/// best value for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub best: Option<f64>,
    pub stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScheduleEvent {
    Improved { best: f64 },
    Stale { epochs: usize },
    Decayed { lr: f64 },
}

impl LrSchedule {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self {
            lr,
            patience,
            factor,
            best: None,
            stale: 0,
        }
    }

    /// Feeds one validation result (higher is better) and returns the
    /// learning rate for the next epoch.
    pub fn step(&mut self, metric: f64) -> (f64, ScheduleEvent) {
        let improved = match self.best {
            None => true,
            Some(b) => metric > b,
        };
        let event = if improved {
            self.best = Some(metric);
            self.stale = 0;
            ScheduleEvent::Improved { best: metric }
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
                ScheduleEvent::Decayed { lr: self.lr }
            } else {
                ScheduleEvent::Stale { epochs: self.stale }
            }
        };
        (self.lr, event)
    }
}
