//! Inverse-decay learning rate with exponential warmup.

use foley_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr_base: f64,
    pub lr_final: f64,
    pub gamma_inv: f64,
    pub power: f64,
    pub warm: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { lr_base: 3e-4, lr_final: 1e-5, gamma_inv: 1e4, power: 0.5, warm: 0.99 }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_base) {
            return Err(Error::Config(format!("need 0 < lr_final <= lr_base, got {} and {}", self.lr_final, self.lr_base)));
        }
        if !(self.gamma_inv > 0.0 && self.power >= 0.0 && (0.0..1.0).contains(&self.warm)) {
            return Err(Error::Config("need gamma_inv > 0, power >= 0 and warm in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `max(lr_final, lr_base·(1 + t/γ_inv)^(−p)) · (1 − w^(t+1))`.
pub fn inverse_lr(t: u64, s: &LrSchedule) -> f64 {
    inverse_lr_at(t as f64, s)
}

/// [`inverse_lr`] at a real-valued step.
pub fn inverse_lr_at(t: f64, s: &LrSchedule) -> f64 {
    let decay = s.lr_base * (1.0 + t / s.gamma_inv).powf(-s.power);
    decay.max(s.lr_final) * (1.0 - s.warm.powf(t + 1.0))
}
