//! Flow-model training: modality dropout, the CFM step under the inverse-decay
//! schedule, logging and checkpoints.

use std::io::Write;

use foley_core::ckpt::Checkpoint;
use foley_core::nn::ParamStore;
use foley_core::optim::{AdamW, AdamWConfig, GradStore};
use foley_core::{Error, Graph, ParamStore32, Result, SeededRng, Tensor, Tensor32};
use serde::{Deserialize, Serialize};

use crate::conditioning::ConditionBundle;
use crate::config::{ModelConfig, TrainConfig};
use crate::flow::{cfm_loss, euler_sample, FlowSample, ModelField};
use crate::lr::inverse_lr;
use crate::mmdit::FlowModel;

pub const CKPT_KIND: &str = "flow";

/// One training pair: a codec posterior-mean latent `[T, d]` and its full condition.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowExample {
    pub x1: Tensor<f64>,
    pub bundle: ConditionBundle,
}

/// Per-channel affine map putting training latents at zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn fit(latents: &[&Tensor<f64>]) -> Result<Self> {
        let d = latents.first().ok_or_else(|| Error::Input("no latents to fit".into()))?.dims2()?.1;
        let (mut s, mut s2, mut n) = (vec![0.0; d], vec![0.0; d], 0usize);
        for x in latents {
            let (t, c) = x.dims2()?;
            if c != d {
                return Err(Error::Input(format!("latent width {c}, expected {d}")));
            }
            for r in 0..t {
                for (j, v) in x.row(r).iter().enumerate() {
                    s[j] += v;
                    s2[j] += v * v;
                }
            }
            n += t;
        }
        let n = n as f64;
        let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
        let std = s2.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-3)).collect();
        Ok(Self { mean, std })
    }

    fn map(&self, x: &Tensor<f64>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<f64>> {
        let (t, d) = x.dims2()?;
        if d != self.mean.len() {
            return Err(Error::Input(format!("latent width {d}, stats cover {}", self.mean.len())));
        }
        let data = (0..t * d).map(|i| f(x.data()[i], self.mean[i % d], self.std[i % d])).collect();
        Tensor::new(&[t, d], data)
    }

    pub fn normalize(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.map(x, |v, m, s| v * s + m)
    }
}

/// Draws `cfg.batch` examples and independently drops text and vision per sample.
pub fn compose_pairwise_batch(
    data: &[FlowExample],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<Vec<FlowExample>> {
    if data.is_empty() {
        return Err(Error::Input("empty flow training set".into()));
    }
    Ok((0..cfg.batch)
        .map(|_| {
            let ex = &data[rng.below(data.len())];
            let drop_text = rng.bernoulli(cfg.p_drop_text);
            let drop_vision = rng.bernoulli(cfg.p_drop_vision);
            FlowExample { x1: ex.x1.clone(), bundle: ex.bundle.dropped(drop_text, drop_vision) }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    pub loss_cfm: f64,
    pub frac_text_present: f64,
    pub frac_vision_present: f64,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "step,lr,loss_cfm,frac_text_present,frac_vision_present";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.lr, self.loss_cfm, self.frac_text_present, self.frac_vision_present
        )
    }
}

/// A flow model with its weights and latent normalization, ready for sampling.
#[derive(Clone, Debug)]
pub struct TrainedFlow {
    pub model: FlowModel,
    pub ps: ParamStore32,
    pub stats: LatentStats,
}

impl TrainedFlow {
    pub fn new(config: ModelConfig, stats: LatentStats, seed: u64) -> Result<Self> {
        if stats.mean.len() != config.d_latent {
            return Err(Error::Config(format!("latent stats cover {} channels, model has {}", stats.mean.len(), config.d_latent)));
        }
        let mut ps = ParamStore::new();
        let model = FlowModel::new(config, &mut ps, &mut SeededRng::derive(seed, 11))?;
        Ok(Self { model, ps, stats })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CKPT_KIND {
            return Err(Error::Input(format!("expected a {CKPT_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: ModelConfig = serde_json::from_value(ck.config["model"].clone())?;
        let stats: LatentStats = serde_json::from_value(ck.config["stats"].clone())?;
        let seed = ck.config["train"]["seed"].as_u64().unwrap_or(0);
        let mut f = Self::new(config, stats, seed)?;
        ck.load_params("model/", &mut f.ps)?;
        Ok(f)
    }

    /// A `[n_frames, d_latent]` latent in codec units, sampled from `seed`.
    pub fn generate(
        &self,
        bundle: &ConditionBundle,
        n_frames: usize,
        seed: u64,
        steps: usize,
        trace: Option<&mut dyn Write>,
    ) -> Result<Tensor<f64>> {
        let field = ModelField { model: &self.model, ps: &self.ps, bundle };
        let x: Tensor32 = euler_sample(&field, &[n_frames, self.model.config.d_latent], seed, steps, trace)?;
        self.stats.denormalize(&x.cast())
    }
}

pub struct FlowTrainer {
    pub flow: TrainedFlow,
    pub cfg: TrainConfig,
    opt: AdamW<f32>,
    rng: SeededRng,
    step: u64,
}

impl FlowTrainer {
    pub fn new(config: ModelConfig, cfg: TrainConfig, stats: LatentStats) -> Result<Self> {
        cfg.validate()?;
        let flow = TrainedFlow::new(config, stats, cfg.seed)?;
        let opt = AdamW::new(&flow.ps, AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() });
        let rng = SeededRng::derive(cfg.seed, 12);
        Ok(Self { flow, cfg, opt, rng, step: 0 })
    }

    /// Steps completed so far; also the index of the next step.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Stages: condition encoding, global/sync features, transformer blocks and
    /// head (all inside the velocity call), then the CFM update at `inverse_lr(step)`.
    pub fn train_step(&mut self, data: &[FlowExample]) -> Result<StepReport> {
        let step = self.step;
        let batch = compose_pairwise_batch(data, &self.cfg, &mut self.rng)?;
        let mut samples = Vec::with_capacity(batch.len());
        for ex in &batch {
            let x1: Tensor32 = self.flow.stats.normalize(&ex.x1)?.cast();
            let x0 = Tensor::new(x1.shape(), (0..x1.numel()).map(|_| self.rng.normal() as f32).collect())?;
            let t = self.rng.uniform();
            samples.push(FlowSample::new(x0, x1, t)?);
        }
        let f = &self.flow;
        let mut g: Graph<f32> = Graph::new();
        let mut losses = Vec::with_capacity(batch.len());
        for (ex, s) in batch.iter().zip(&samples) {
            losses.push(cfm_loss(&mut g, &f.model, &f.ps, &ex.bundle, s)?);
        }
        let rows = losses.iter().map(|&l| g.reshape(l, &[1])).collect::<Result<Vec<_>>>()?;
        let stacked = g.concat(&rows, 0)?;
        let loss = g.mean(stacked)?;
        let loss_val = g.value(loss).item()? as f64;
        if !loss_val.is_finite() {
            return Err(Error::Numeric(format!("non-finite flow loss at step {step}")));
        }
        let grads = g.backward(loss)?;
        let mut gs = GradStore::zeros_like(&f.ps);
        gs.accumulate(&g, &grads, &f.ps)?;
        drop(g);
        if !gs.all_finite() {
            return Err(Error::Numeric(format!("non-finite flow gradient at step {step}")));
        }
        gs.clip(self.cfg.grad_clip);
        let lr = inverse_lr(step, &self.cfg.schedule);
        self.opt.step(&mut self.flow.ps, &gs, lr)?;
        self.step += 1;
        let n = batch.len() as f64;
        Ok(StepReport {
            step,
            lr,
            loss_cfm: loss_val,
            frac_text_present: batch.iter().filter(|e| e.bundle.text_present()).count() as f64 / n,
            frac_vision_present: batch.iter().filter(|e| e.bundle.vision_present()).count() as f64 / n,
        })
    }

    pub fn run<W: Write>(&mut self, data: &[FlowExample], csv: &mut W) -> Result<Vec<StepReport>> {
        self.run_until(data, self.cfg.total_steps, csv)
    }

    /// Trains until `until` steps are done, writing one CSV row per step (and
    /// the header when starting from step 0).
    pub fn run_until<W: Write>(&mut self, data: &[FlowExample], until: u64, csv: &mut W) -> Result<Vec<StepReport>> {
        if self.step == 0 {
            writeln!(csv, "{}", StepReport::CSV_HEADER)?;
        }
        let mut out = Vec::new();
        while self.step < until {
            let r = self.train_step(data)?;
            writeln!(csv, "{}", r.csv_line())?;
            out.push(r);
        }
        csv.flush()?;
        Ok(out)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::json!({
            "model": self.flow.model.config,
            "train": self.cfg,
            "stats": self.flow.stats,
        });
        let mut ck = Checkpoint::new(CKPT_KIND, self.step, config);
        ck.put_params("model/", &self.flow.ps);
        ck.put_adam("opt/", &self.flow.ps, &self.opt);
        ck.rng = Some(self.rng.state());
        Ok(ck)
    }

    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        let flow = TrainedFlow::from_checkpoint(ck)?;
        let cfg: TrainConfig = serde_json::from_value(ck.config["train"].clone())?;
        let mut t = Self::new(flow.model.config.clone(), cfg, flow.stats.clone())?;
        t.flow.ps.copy_from(&flow.ps)?;
        ck.load_adam("opt/", &t.flow.ps, &mut t.opt)?;
        let state = ck.rng.as_ref().ok_or_else(|| Error::Integrity("flow checkpoint has no rng state".into()))?;
        t.rng = SeededRng::from_state(state)?;
        t.step = ck.step;
        Ok(t)
    }
}
