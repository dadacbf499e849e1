use foley_core::{Error, Result};
use foley_dsp::N_CLASSES;
use serde::{Deserialize, Serialize};

use crate::conditioning::Vocab;
use crate::lr::LrSchedule;
use crate::rope::RopeConfig;

pub const HEAD_DIM: usize = 64;

/// `(h, d_hidden)` with `h = round(alpha·depth)` and `d_hidden = 64·h`.
pub fn scaling_dims(alpha: f64, depth: usize) -> Result<(usize, usize)> {
    if !(alpha > 0.0) || depth == 0 {
        return Err(Error::Config(format!("scaling needs alpha > 0 and depth >= 1, got {alpha}, {depth}")));
    }
    let h = (alpha * depth as f64).round() as usize;
    if h == 0 {
        return Err(Error::Config(format!("alpha {alpha} at depth {depth} gives zero heads")));
    }
    Ok((h, HEAD_DIM * h))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub depth_joint: usize,
    pub depth_single: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Heads-to-depth ratio the config was (or could have been) derived from.
    pub alpha: f64,
    pub mlp_ratio: usize,
    pub d_latent: usize,
    pub max_audio_len: usize,
    pub max_vision_len: usize,
    pub max_text_len: usize,
    pub max_seconds: usize,
    /// Width of vision/sync input features (the event-track raster).
    pub feat_dim: usize,
    pub vocab_size: usize,
    pub rope: RopeConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth_joint: 2,
            depth_single: 2,
            heads: 2,
            head_dim: HEAD_DIM,
            alpha: 0.5,
            mlp_ratio: 2,
            d_latent: 16,
            max_audio_len: 431,
            max_vision_len: 80,
            max_text_len: 32,
            max_seconds: 10,
            feat_dim: 2 * N_CLASSES,
            vocab_size: Vocab::synthetic().len(),
            rope: RopeConfig::default(),
        }
    }
}

impl ModelConfig {
    /// A config whose head count and width follow [`scaling_dims`] over the total depth.
    pub fn scaled(alpha: f64, depth_joint: usize, depth_single: usize) -> Result<Self> {
        let (heads, _) = scaling_dims(alpha, depth_joint + depth_single)?;
        Ok(Self { depth_joint, depth_single, heads, alpha, ..Self::default() })
    }

    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn depth(&self) -> usize {
        self.depth_joint + self.depth_single
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.head_dim != HEAD_DIM {
            return bad(format!("head_dim is fixed at {HEAD_DIM}, got {}", self.head_dim));
        }
        if self.heads == 0 || self.depth() == 0 || self.mlp_ratio == 0 || self.d_latent == 0 {
            return bad("heads, depth, mlp_ratio and d_latent must be positive".into());
        }
        if self.max_seconds == 0 || self.feat_dim == 0 || self.vocab_size == 0 {
            return bad("max_seconds, feat_dim and vocab_size must be positive".into());
        }
        self.rope.validate()
    }

    /// Advisory notes when the heads-to-depth ratio is unusual; never fatal.
    pub fn warnings(&self) -> Vec<String> {
        let r = self.heads as f64 / self.depth() as f64;
        if (20.0 / 23.0..=100.0).contains(&r) {
            Vec::new()
        } else {
            vec![format!("heads/depth ratio {r:.3} is outside the usual range")]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch: usize,
    pub p_drop_text: f64,
    pub p_drop_vision: f64,
    pub seed: u64,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            batch: 4,
            p_drop_text: 0.1,
            p_drop_vision: 0.1,
            seed: 0,
            grad_clip: 1.0,
            weight_decay: 0.0,
            schedule: LrSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_drop_text", self.p_drop_text), ("p_drop_vision", self.p_drop_vision)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.batch == 0 || !(self.grad_clip > 0.0) {
            return Err(Error::Config("batch and grad_clip must be positive".into()));
        }
        self.schedule.validate()
    }
}
