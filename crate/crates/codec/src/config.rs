use foley_core::{Error, Result};
use foley_dsp::MelConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub d_latent: usize,
    /// Encoder conv layers, including the input, downsampling and output layers.
    pub n_enc_layers: usize,
    pub channels: usize,
    pub time_compression: usize,
    /// Log-mel values are mapped to `(m − norm_shift) / norm_scale` inside the model.
    pub norm_shift: f64,
    pub norm_scale: f64,
    pub mel: MelConfig,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            d_latent: 16,
            n_enc_layers: 8,
            channels: 32,
            time_compression: 2,
            norm_shift: -4.0,
            norm_scale: 4.0,
            mel: MelConfig::default(),
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_compression != 2 {
            return Err(Error::Config(format!("time_compression must be 2, got {}", self.time_compression)));
        }
        if self.n_enc_layers < 3 {
            return Err(Error::Config("n_enc_layers must be at least 3".into()));
        }
        if self.d_latent == 0 || self.channels == 0 || !(self.norm_scale > 0.0) {
            return Err(Error::Config("d_latent, channels and norm_scale must be positive".into()));
        }
        self.mel.validate()
    }

    /// Latent frames per second.
    pub fn latent_rate(&self) -> f64 {
        self.mel.frame_rate() / self.time_compression as f64
    }
}

/// Step thresholds and weight ceilings of the four-stage schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stage1_end: u64,
    pub stage2_end: u64,
    pub stage3_end: u64,
    pub kl_upper: f64,
    pub gan_upper: f64,
    pub delta: f64,
    pub lambda_r1: f64,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            stage1_end: 500,
            stage2_end: 1000,
            stage3_end: 1500,
            kl_upper: 1e-2,
            gan_upper: 0.1,
            delta: 0.1,
            lambda_r1: 1.0,
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.stage1_end && self.stage1_end < self.stage2_end && self.stage2_end < self.stage3_end) {
            return Err(Error::Config("need 0 < stage1_end < stage2_end < stage3_end".into()));
        }
        if self.kl_upper < 0.0 || self.gan_upper < 0.0 || self.lambda_r1 < 0.0 || self.delta < 0.0 {
            return Err(Error::Config("kl_upper, gan_upper, lambda_r1 and delta must be >= 0".into()));
        }
        Ok(())
    }

    /// The same schedule with every step threshold multiplied by `f` (rounded, kept increasing).
    pub fn scaled(&self, f: f64) -> Self {
        let s1 = ((self.stage1_end as f64 * f).round() as u64).max(1);
        let s2 = ((self.stage2_end as f64 * f).round() as u64).max(s1 + 1);
        let s3 = ((self.stage3_end as f64 * f).round() as u64).max(s2 + 1);
        Self { stage1_end: s1, stage2_end: s2, stage3_end: s3, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecTrainConfig {
    pub steps: u64,
    pub batch: usize,
    /// Training crops are this many mel frames (even).
    pub crop_frames: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Steps of synthetic-panning training for the mono-to-stereo predictor.
    pub stereo_steps: u64,
    pub schedule: StageSchedule,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 4,
            crop_frames: 32,
            lr_g: 2e-3,
            lr_d: 1e-3,
            grad_clip: 1.0,
            weight_decay: 0.0,
            seed: 0,
            stereo_steps: 200,
            schedule: StageSchedule::default(),
        }
    }
}

impl CodecTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.crop_frames < 2 || self.crop_frames % 2 != 0 {
            return Err(Error::Config("batch must be >= 1 and crop_frames even and >= 2".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("learning rates and grad_clip must be positive".into()));
        }
        self.schedule.validate()
    }
}
