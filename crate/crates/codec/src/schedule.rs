//! Piecewise-linear loss weights of the four training stages.
//!
//! Steps are 1-based. Stage 1 (`step ≤ stage1_end`) trains on reconstruction
//! only; stage 2 ramps the KL weight up to `kl_upper`; stage 3 holds it and
//! ramps the adversarial weight up to `gan_upper`; stage 4 holds both and
//! freezes the encoder and posterior.

use serde::{Deserialize, Serialize};

use crate::config::StageSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageWeights {
    pub stage: u8,
    pub gamma_kl: f64,
    pub gamma_gan: f64,
    pub freeze_encoder: bool,
}

fn ramp(step: u64, start: u64, end: u64) -> f64 {
    ((step.saturating_sub(start)) as f64 / (end - start) as f64).min(1.0)
}

pub fn stage_weights(step: u64, s: &StageSchedule) -> StageWeights {
    let (stage, gamma_kl, gamma_gan) = if step <= s.stage1_end {
        (1, 0.0, 0.0)
    } else if step <= s.stage2_end {
        (2, s.kl_upper * ramp(step, s.stage1_end, s.stage2_end), 0.0)
    } else if step <= s.stage3_end {
        (3, s.kl_upper, s.gan_upper * ramp(step, s.stage2_end, s.stage3_end))
    } else {
        (4, s.kl_upper, s.gan_upper)
    };
    StageWeights { stage, gamma_kl, gamma_gan, freeze_encoder: stage == 4 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_and_midpoints() {
        let s = StageSchedule::default();
        let w = stage_weights(s.stage1_end, &s);
        assert_eq!((w.stage, w.gamma_kl, w.gamma_gan), (1, 0.0, 0.0));
        let mid = (s.stage1_end + s.stage2_end) / 2;
        assert_eq!(stage_weights(mid, &s).gamma_kl, s.kl_upper / 2.0);
        let w = stage_weights(s.stage3_end + 1, &s);
        assert_eq!((w.stage, w.gamma_kl, w.gamma_gan, w.freeze_encoder), (4, s.kl_upper, s.gan_upper, true));
        assert!(!stage_weights(s.stage3_end, &s).freeze_encoder);
    }
}
