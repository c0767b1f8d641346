use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// No strict improvement for `patience` consecutive epochs.
    Patience,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

/// Tracks the best validation score and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    max_epochs: usize,
    epoch: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

/// Outcome of observing one epoch's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: Option<StopReason>,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self {
            patience,
            max_epochs,
            epoch: 0,
            best: None,
            stale: 0,
        }
    }

    /// Record the score of the next epoch (epochs count from 1).
    pub fn observe(&mut self, score: f64) -> Observation {
        self.epoch += 1;
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((self.epoch, score));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let stop = if self.stale >= self.patience {
            Some(StopReason::Patience)
        } else if self.epoch >= self.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        Observation { improved, stop }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_score(&self) -> Option<f64> {
        self.best.map(|(_, s)| s)
    }
}
