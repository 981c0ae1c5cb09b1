//! Early stopping and learning-rate plateau control, driven purely by the
//! sequence of monitored values (higher is better).

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauController {
    early_stop_patience: usize,
    lr_patience: usize,
    lr_factor: f64,
    min_lr: f64,
    lr: f64,
    best: Option<f64>,
    since_best: usize,
    since_lr_change: usize,
    epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochDecision {
    pub epoch: usize,
    pub improved: bool,
    /// Learning rate for the next epoch when it was just reduced.
    pub lr_reduced_to: Option<f64>,
    pub stop: bool,
}

impl PlateauController {
    pub fn new(
        lr: f64,
        early_stop_patience: usize,
        lr_patience: usize,
        lr_factor: f64,
        min_lr: f64,
    ) -> Self {
        Self {
            early_stop_patience,
            lr_patience,
            lr_factor,
            min_lr,
            lr,
            best: None,
            since_best: 0,
            since_lr_change: 0,
            epoch: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Record the monitor value of the epoch just finished. NaN counts as
    /// the worst possible value.
    pub fn observe(&mut self, monitor: f64) -> EpochDecision {
        self.epoch += 1;
        let monitor = if monitor.is_nan() {
            f64::NEG_INFINITY
        } else {
            monitor
        };
        let improved = self.best.is_none_or(|b| monitor > b);
        let mut lr_reduced_to = None;
        if improved {
            self.best = Some(monitor);
            self.since_best = 0;
            self.since_lr_change = 0;
        } else {
            self.since_best += 1;
            self.since_lr_change += 1;
            if self.since_lr_change >= self.lr_patience {
                let next = (self.lr * self.lr_factor).max(self.min_lr);
                if next < self.lr {
                    self.lr = next;
                    lr_reduced_to = Some(next);
                }
                self.since_lr_change = 0;
            }
        }
        EpochDecision {
            epoch: self.epoch,
            improved,
            lr_reduced_to,
            stop: self.since_best >= self.early_stop_patience,
        }
    }
}
