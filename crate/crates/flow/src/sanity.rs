//! Unconditional flow on a two-component Gaussian mixture in 2-D, used to
//! check that training plus Euler sampling recovers a known distribution.

use foley_core::{Result, SeededRng, Tensor};

use crate::conditioning::{ConditionBundle, DurationSpec};
use crate::config::{ModelConfig, TrainConfig};
use crate::lr::LrSchedule;
use crate::trainer::{FlowExample, FlowTrainer, LatentStats};

#[derive(Clone, Debug)]
pub struct Mixture2d {
    pub means: [[f64; 2]; 2],
    pub std: f64,
}

impl Default for Mixture2d {
    fn default() -> Self {
        Self { means: [[0.5, 1.0], [1.5, 1.6]], std: 0.3 }
    }
}

impl Mixture2d {
    pub fn sample(&self, rng: &mut SeededRng) -> [f64; 2] {
        let m = self.means[rng.below(2)];
        [m[0] + self.std * rng.normal(), m[1] + self.std * rng.normal()]
    }

    /// Mean of the equal-weight mixture.
    pub fn mean(&self) -> [f64; 2] {
        let [a, b] = self.means;
        [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
    }

    /// `σ²·I + ¼·(m₁ − m₂)(m₁ − m₂)ᵀ`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [a, b] = self.means;
        let d = [a[0] - b[0], a[1] - b[1]];
        let s2 = self.std * self.std;
        [[s2 + d[0] * d[0] / 4.0, d[0] * d[1] / 4.0], [d[1] * d[0] / 4.0, s2 + d[1] * d[1] / 4.0]]
    }
}

#[derive(Clone, Debug)]
pub struct SanityConfig {
    pub train_points: usize,
    pub steps: u64,
    pub batch: usize,
    pub n_samples: usize,
    pub euler_steps: usize,
    pub seed: u64,
}

impl Default for SanityConfig {
    fn default() -> Self {
        Self { train_points: 4096, steps: 1500, batch: 32, n_samples: 5000, euler_steps: 20, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct SanityReport {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub target_mean: [f64; 2],
    pub target_cov: [[f64; 2]; 2],
    pub final_loss: f64,
}

impl SanityReport {
    /// Largest absolute deviation over the mean and covariance entries.
    pub fn max_error(&self) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..2 {
            e = e.max((self.mean[i] - self.target_mean[i]).abs());
            for j in 0..2 {
                e = e.max((self.cov[i][j] - self.target_cov[i][j]).abs());
            }
        }
        e
    }
}

/// Two audio-only blocks, one head, single-token sequences of width 2.
pub fn sanity_model() -> ModelConfig {
    ModelConfig { depth_joint: 0, depth_single: 2, heads: 1, alpha: 0.5, d_latent: 2, ..ModelConfig::default() }
}

pub fn run_sanity(mix: &Mixture2d, cfg: &SanityConfig) -> Result<SanityReport> {
    let mut rng = SeededRng::derive(cfg.seed, 21);
    let bundle = ConditionBundle::unconditional(DurationSpec::new(0, 1));
    let data: Vec<FlowExample> = (0..cfg.train_points)
        .map(|_| {
            let p = mix.sample(&mut rng);
            Ok(FlowExample { x1: Tensor::new(&[1, 2], p.to_vec())?, bundle: bundle.clone() })
        })
        .collect::<Result<_>>()?;
    let train = TrainConfig {
        total_steps: cfg.steps,
        batch: cfg.batch,
        p_drop_text: 0.0,
        p_drop_vision: 0.0,
        seed: cfg.seed,
        schedule: LrSchedule { lr_base: 2e-3, lr_final: 1e-4, gamma_inv: 500.0, power: 0.5, warm: 0.95 },
        ..TrainConfig::default()
    };
    let mut tr = FlowTrainer::new(sanity_model(), train, LatentStats::identity(2))?;
    let reports = tr.run(&data, &mut std::io::sink())?;
    let tail = reports.len().min(50).max(1);
    let final_loss = reports.iter().rev().take(tail).map(|r| r.loss_cfm).sum::<f64>() / tail as f64;
    let mut pts = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let x = tr.flow.generate(&bundle, 1, cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), cfg.euler_steps, None)?;
        pts.push([x.data()[0], x.data()[1]]);
    }
    let n = pts.len() as f64;
    let mean = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
    let mut cov = [[0.0; 2]; 2];
    for p in &pts {
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    Ok(SanityReport { mean, cov, target_mean: mix.mean(), target_cov: mix.covariance(), final_loss })
}
