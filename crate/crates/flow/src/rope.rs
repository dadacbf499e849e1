//! Rotary position angles aligned across modalities of different frame rates.
//!
//! A token at index `i` of a stream sampled at `rate` gets the effective
//! position `i · audio_rate / rate`, so tokens at equal wall-clock time share
//! rotation angles. Text tokens are never rotated.

use foley_core::{Error, Graph, Result, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RopeConfig {
    pub base: f64,
    pub audio_rate: f64,
    pub vision_rate: f64,
    pub sync_rate: f64,
}

impl Default for RopeConfig {
    fn default() -> Self {
        // codec latents: 44100 / 512 / 2 per second
        Self { base: 10_000.0, audio_rate: 44_100.0 / 1024.0, vision_rate: 8.0, sync_rate: 24.0 }
    }
}

impl RopeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.vision_rate > 0.0 && self.audio_rate >= self.vision_rate && self.sync_rate > 0.0 && self.base > 1.0) {
            return Err(Error::Config(format!(
                "rope needs audio_rate >= vision_rate > 0, sync_rate > 0, base > 1; got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// `audio_rate / rate`.
    pub fn rate_scale(&self, rate: f64) -> f64 {
        self.audio_rate / rate
    }
}

/// Angles `[positions.len(), head_dim/2]`: `positions[i]·rate_scale·base^(−2k/head_dim)`.
pub fn rope_angles(positions: &[f64], rate_scale: f64, head_dim: usize, base: f64) -> Result<Tensor<f64>> {
    if !(rate_scale > 0.0) {
        return Err(Error::Input(format!("rate_scale must be positive, got {rate_scale}")));
    }
    if head_dim == 0 || head_dim % 2 != 0 {
        return Err(Error::Dimension(format!("rope needs an even head dim, got {head_dim}")));
    }
    let half = head_dim / 2;
    let freqs: Vec<f64> = (0..half).map(|k| base.powf(-2.0 * k as f64 / head_dim as f64)).collect();
    let mut out = Vec::with_capacity(positions.len() * half);
    for &p in positions {
        let p = p * rate_scale;
        out.extend(freqs.iter().map(|f| p * f));
    }
    Tensor::new(&[positions.len(), half], out)
}

/// Rotates `x[h, T, head_dim]` at token indices `0..T` of a stream scaled by `rate_scale`.
pub fn aligned_rope_apply<T: Scalar>(g: &mut Graph<T>, x: Var, rate_scale: f64, base: f64) -> Result<Var> {
    let (_, t, d) = g.value(x).dims3()?;
    let positions: Vec<f64> = (0..t).map(|i| i as f64).collect();
    let angles = rope_angles(&positions, rate_scale, d, base)?;
    g.rope(x, &angles)
}
