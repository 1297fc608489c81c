use serde::{Deserialize, Serialize};

/// Exponential learning-rate decay by `decay_factor` every `decay_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_epochs: f64,
    /// Decay in whole steps at multiples of `decay_epochs` instead of
    /// continuously.
    pub staircase: bool,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr0: 1e-3,
            decay_factor: 10.0,
            decay_epochs: 5.0,
            staircase: false,
        }
    }
}

impl LrSchedule {
    /// Rate at a (possibly fractional) epoch position.
    pub fn at(&self, epoch_progress: f64) -> f64 {
        let mut exponent = epoch_progress.max(0.0) / self.decay_epochs;
        if self.staircase {
            exponent = exponent.floor();
        }
        self.lr0 / self.decay_factor.powf(exponent)
    }
}
