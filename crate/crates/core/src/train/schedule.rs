use super::metrics::MetricKind;

/// Smallest change that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate to
    /// use from now on.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss <= self.best - MIN_IMPROVEMENT {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Stops after `patience` consecutive evaluations without improving the best
/// metric.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub metric: MetricKind,
    pub patience: usize,
    best: Option<f64>,
    misses: usize,
}

impl EarlyStopping {
    pub fn new(metric: MetricKind, patience: usize) -> Self {
        EarlyStopping {
            metric,
            patience,
            best: None,
            misses: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one evaluation; true once training should stop.
    pub fn update(&mut self, value: f64) -> bool {
        match self.best {
            Some(b) if !self.metric.improves(value, b, MIN_IMPROVEMENT) => self.misses += 1,
            _ => {
                self.best = Some(value);
                self.misses = 0;
            }
        }
        self.misses >= self.patience
    }
}
