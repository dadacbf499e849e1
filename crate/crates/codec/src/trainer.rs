//! Staged codec training: reconstruction, KL ramp, adversarial ramp, then
//! decoder-only fine-tuning against a frozen encoder.

use std::io::Write;

use foley_core::ckpt::Checkpoint;
use foley_core::nn::ParamStore;
use foley_core::optim::{AdamW, AdamWConfig, GradStore};
use foley_core::{Error, Graph, ParamStore32, Result, SeededRng, Tensor, Tensor32, Var};
use foley_dsp::MelSpectrogram;
use serde::{Deserialize, Serialize};

use crate::config::{CodecConfig, CodecTrainConfig};
use crate::disc::{r1_penalty, Critic, Discriminator};
use crate::losses::{batch_mean, generator_loss, hinge_loss, kl_divergence, kl_loss_with_margin, recon_mse};
use crate::schedule::stage_weights;
use crate::stereo::MonoToStereo;
use crate::vae::MelVae;

pub const CKPT_KIND: &str = "codec";
const DISC_WIDTH: usize = 8;
const STEREO_HIDDEN: usize = 32;

/// The codec networks and their parameters.
#[derive(Clone, Debug)]
pub struct CodecModel {
    pub vae: MelVae,
    pub disc: Discriminator,
    pub stereo: MonoToStereo,
    pub gen: ParamStore32,
    pub dps: ParamStore32,
    pub sps: ParamStore32,
}

impl CodecModel {
    pub fn new(config: &CodecConfig, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::derive(seed, 1);
        let mut gen = ParamStore::new();
        let vae = MelVae::new(config.clone(), &mut gen, &mut rng)?;
        let mut dps = ParamStore::new();
        let disc = Discriminator::new(&mut dps, DISC_WIDTH, config.norm_shift, config.norm_scale, &mut rng);
        let mut sps = ParamStore::new();
        let stereo =
            MonoToStereo::new(&mut sps, config.mel.n_mels, STEREO_HIDDEN, config.norm_shift, config.norm_scale, &mut rng)?;
        Ok(Self { vae, disc, stereo, gen, dps, sps })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.vae.config
    }

    /// Mean per-clip MSE between each mel and its posterior-mean reconstruction.
    pub fn eval_mse(&self, mels: &[MelSpectrogram]) -> Result<f64> {
        if mels.is_empty() {
            return Err(Error::Input("no clips to evaluate".into()));
        }
        let mut acc = 0.0;
        for m in mels {
            let r = self.vae.reconstruct(&self.gen, m)?;
            let se: f64 = m.data().iter().zip(r.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            acc += se / m.data().len() as f64;
        }
        Ok(acc / mels.len() as f64)
    }

    fn put(&self, ck: &mut Checkpoint) {
        ck.put_params("gen/", &self.gen);
        ck.put_params("disc/", &self.dps);
        ck.put_params("stereo/", &self.sps);
    }

    /// Rebuilds the model described by a codec checkpoint and loads its weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CKPT_KIND {
            return Err(Error::Input(format!("expected a {CKPT_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: CodecConfig = serde_json::from_value(ck.config["codec"].clone())?;
        let seed = ck.config["train"]["seed"].as_u64().unwrap_or(0);
        let mut m = Self::new(&config, seed)?;
        ck.load_params("gen/", &mut m.gen)?;
        ck.load_params("disc/", &mut m.dps)?;
        ck.load_params("stereo/", &mut m.sps)?;
        Ok(m)
    }
}

/// Loss components of one step; `total = l_mse + γ_kl·l_kl + γ_gan·(l_g + l_d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub stage: u8,
    pub l_mse: f64,
    pub l_kl: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub gamma_kl: f64,
    pub gamma_gan: f64,
    pub l_r1: f64,
    pub total: f64,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "step,stage,l_mse,l_kl,l_g,l_d,gamma_kl,gamma_gan,l_r1,total";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.stage,
            self.l_mse,
            self.l_kl,
            self.l_g,
            self.l_d,
            self.gamma_kl,
            self.gamma_gan,
            self.l_r1,
            self.total
        )
    }
}

/// Channels-first training spectrograms; every clip must be at least one crop long.
pub fn training_tensors(mels: &[MelSpectrogram], crop_frames: usize) -> Result<Vec<Tensor32>> {
    if mels.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    mels.iter()
        .map(|m| {
            if m.n_frames < crop_frames {
                return Err(Error::Input(format!("clip of {} frames is shorter than the {crop_frames}-frame crop", m.n_frames)));
            }
            Ok(m.to_channels_first())
        })
        .collect()
}

fn crop_cols(x: &Tensor32, start: usize, len: usize) -> Result<Tensor32> {
    let (d, _) = x.dims2()?;
    let mut out = Vec::with_capacity(d * len);
    for r in 0..d {
        out.extend_from_slice(&x.row(r)[start..start + len]);
    }
    Tensor::new(&[d, len], out)
}

fn item(g: &Graph<f32>, v: Var) -> Result<f64> {
    Ok(g.value(v).item()? as f64)
}

pub struct CodecTrainer {
    pub model: CodecModel,
    pub cfg: CodecTrainConfig,
    opt_g: AdamW<f32>,
    opt_d: AdamW<f32>,
    rng: SeededRng,
    step: u64,
}

impl CodecTrainer {
    pub fn new(codec: CodecConfig, cfg: CodecTrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = CodecModel::new(&codec, cfg.seed)?;
        let adam = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() };
        let opt_g = AdamW::new(&model.gen, adam.clone());
        let opt_d = AdamW::new(&model.dps, adam);
        let rng = SeededRng::derive(cfg.seed, 2);
        Ok(Self { model, cfg, opt_g, opt_d, rng, step: 0 })
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn apply_freeze(&mut self, freeze: bool) {
        self.model.gen.set_trainable_prefix("enc.", !freeze);
    }

    /// Runs one generator update and, once the adversarial weight is positive,
    /// one discriminator update.
    pub fn train_step(&mut self, data: &[Tensor32]) -> Result<StepReport> {
        if data.is_empty() {
            return Err(Error::Input("empty training set".into()));
        }
        let step = self.step + 1;
        let sched = self.cfg.schedule.clone();
        let w = stage_weights(step, &sched);
        self.apply_freeze(w.freeze_encoder);
        let crop = self.cfg.crop_frames;
        let d_lat = self.model.config().d_latent;

        let mut reals = Vec::with_capacity(self.cfg.batch);
        let mut noises = Vec::with_capacity(self.cfg.batch);
        for _ in 0..self.cfg.batch {
            let x = &data[self.rng.below(data.len())];
            let start = self.rng.below(x.dim(1) - crop + 1);
            reals.push(crop_cols(x, start, crop)?);
            let eps: Vec<f32> = (0..d_lat * crop / 2).map(|_| self.rng.normal() as f32).collect();
            noises.push(Tensor::new(&[d_lat, crop / 2], eps)?);
        }

        let adversarial = w.gamma_gan > 0.0;
        let m = &self.model;
        let mut g: Graph<f32> = Graph::new();
        let (mut mses, mut kls, mut scores, mut fakes) = (vec![], vec![], vec![], vec![]);
        for (x, e) in reals.iter().zip(&noises) {
            let xv = g.constant(x.clone());
            let (mu, ls) = m.vae.encode(&mut g, &m.gen, xv)?;
            let ev = g.constant(e.clone());
            let z = MelVae::reparameterize(&mut g, mu, ls, ev)?;
            let y = m.vae.decode(&mut g, &m.gen, z)?;
            mses.push(recon_mse(&mut g, xv, y)?);
            kls.push(kl_divergence(&mut g, mu, ls)?);
            if adversarial {
                scores.push(m.disc.score(&mut g, &m.dps, y)?);
                fakes.push(g.value(y).clone());
            }
        }
        let l_mse = batch_mean(&mut g, &mses)?;
        let l_kl = kl_loss_with_margin(&mut g, &kls, sched.delta)?;
        let mut loss = g.scale(l_kl, w.gamma_kl)?;
        loss = g.add(l_mse, loss)?;
        let mut l_g_val = 0.0;
        if adversarial {
            let l_g = generator_loss(&mut g, &scores)?;
            l_g_val = item(&g, l_g)?;
            let t = g.scale(l_g, w.gamma_gan)?;
            loss = g.add(loss, t)?;
        }
        let (l_mse_val, l_kl_val) = (item(&g, l_mse)?, item(&g, l_kl)?);
        if !item(&g, loss)?.is_finite() {
            return Err(Error::Numeric(format!("non-finite generator loss at step {step}")));
        }
        let grads = g.backward(loss)?;
        let mut gs = GradStore::zeros_like(&self.model.gen);
        gs.accumulate(&g, &grads, &self.model.gen)?;
        drop(g);
        if !gs.all_finite() {
            return Err(Error::Numeric(format!("non-finite generator gradient at step {step}")));
        }
        gs.clip(self.cfg.grad_clip);
        self.opt_g.step(&mut self.model.gen, &gs, self.cfg.lr_g)?;

        let (mut l_d_val, mut l_r1_val) = (0.0, 0.0);
        if adversarial {
            let m = &self.model;
            let mut g: Graph<f32> = Graph::new();
            let (mut rs, mut fs) = (vec![], vec![]);
            for (x, f) in reals.iter().zip(&fakes) {
                let xv = g.constant(x.clone());
                rs.push(m.disc.score(&mut g, &m.dps, xv)?);
                let fv = g.constant(f.clone());
                fs.push(m.disc.score(&mut g, &m.dps, fv)?);
            }
            let hinge = hinge_loss(&mut g, &rs, &fs)?;
            l_d_val = item(&g, hinge)?;
            let obj = g.scale(hinge, w.gamma_gan)?;
            let grads = g.backward(obj)?;
            let mut gs = GradStore::zeros_like(&m.dps);
            gs.accumulate(&g, &grads, &m.dps)?;
            if sched.lambda_r1 > 0.0 {
                let (pen, r1) = r1_penalty(&m.disc, &m.dps, &reals)?;
                l_r1_val = pen;
                for id in m.dps.ids() {
                    let mut t = r1.get(id).clone();
                    t.scale_in_place(sched.lambda_r1 as f32);
                    gs.add(id, &t)?;
                }
            }
            if !gs.all_finite() || !l_d_val.is_finite() || !l_r1_val.is_finite() {
                return Err(Error::Numeric(format!("non-finite discriminator update at step {step}")));
            }
            gs.clip(self.cfg.grad_clip);
            self.opt_d.step(&mut self.model.dps, &gs, self.cfg.lr_d)?;
        }

        self.step = step;
        Ok(StepReport {
            step,
            stage: w.stage,
            l_mse: l_mse_val,
            l_kl: l_kl_val,
            l_g: l_g_val,
            l_d: l_d_val,
            gamma_kl: w.gamma_kl,
            gamma_gan: w.gamma_gan,
            l_r1: l_r1_val,
            total: l_mse_val + w.gamma_kl * l_kl_val + w.gamma_gan * (l_g_val + l_d_val),
        })
    }

    /// Trains until `cfg.steps`, writing one CSV row per step (and the header when starting from step 0).
    pub fn run<W: Write>(&mut self, data: &[Tensor32], csv: &mut W) -> Result<Vec<StepReport>> {
        self.run_until(data, self.cfg.steps, csv)
    }

    pub fn run_until<W: Write>(&mut self, data: &[Tensor32], until: u64, csv: &mut W) -> Result<Vec<StepReport>> {
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

    /// Fits the stereo predictor on the training spectrograms.
    pub fn train_stereo(&mut self, data: &[Tensor32]) -> Result<f64> {
        let mut rng = SeededRng::derive(self.cfg.seed, 3);
        let m = &mut self.model;
        m.stereo.train_synthetic(&mut m.sps, data, self.cfg.stereo_steps, 3e-3, &mut rng)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::json!({ "codec": self.model.config(), "train": self.cfg });
        let mut ck = Checkpoint::new(CKPT_KIND, self.step, config);
        self.model.put(&mut ck);
        ck.put_adam("opt_g/", &self.model.gen, &self.opt_g);
        ck.put_adam("opt_d/", &self.model.dps, &self.opt_d);
        ck.rng = Some(self.rng.state());
        Ok(ck)
    }

    /// Restores a trainer from [`CodecTrainer::checkpoint`] output; training
    /// continues exactly as an uninterrupted run would.
    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        let codec: CodecConfig = serde_json::from_value(ck.config["codec"].clone())?;
        let cfg: CodecTrainConfig = serde_json::from_value(ck.config["train"].clone())?;
        let mut t = Self::new(codec, cfg)?;
        t.model = CodecModel::from_checkpoint(ck)?;
        ck.load_adam("opt_g/", &t.model.gen, &mut t.opt_g)?;
        ck.load_adam("opt_d/", &t.model.dps, &mut t.opt_d)?;
        let state = ck.rng.as_ref().ok_or_else(|| Error::Integrity("codec checkpoint has no rng state".into()))?;
        t.rng = SeededRng::from_state(state)?;
        t.step = ck.step;
        let freeze = stage_weights(t.step.max(1), &t.cfg.schedule).freeze_encoder;
        t.apply_freeze(freeze);
        Ok(t)
    }
}
