//! A small convolutional event classifier over log-mel frames. Its pooled
//! penultimate activations serve as the embedding for Fréchet distance and its
//! softmax output as the posterior for KL.

use std::io::Write;

use foley_core::ckpt::Checkpoint;
use foley_core::nn::{Conv1d, Linear, ParamStore};
use foley_core::optim::{AdamW, AdamWConfig, GradStore};
use foley_core::{Error, Graph, ParamStore32, Result, SeededRng, Tensor, Tensor32, Var};
use foley_dsp::{griffin_lim, synth_event_clip, EventClass, MelAnalyzer, MelConfig, Waveform, N_CLASSES};
use serde::{Deserialize, Serialize};

use crate::posterior::ClassifierPosterior;

pub const CKPT_KIND: &str = "classifier";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub mel: MelConfig,
    pub channels: usize,
    pub emb_dim: usize,
    pub kernel: usize,
    pub clips_per_class: usize,
    pub heldout_per_class: usize,
    pub min_s: f64,
    pub max_s: f64,
    /// Fraction of training clips replaced by their Griffin-Lim resynthesis.
    pub resynth_prob: f64,
    pub resynth_iters: usize,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            channels: 32,
            emb_dim: 32,
            kernel: 5,
            clips_per_class: 40,
            heldout_per_class: 10,
            min_s: 1.0,
            max_s: 2.0,
            resynth_prob: 0.5,
            resynth_iters: 16,
            steps: 1500,
            batch: 8,
            lr: 2e-3,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.channels == 0 || self.emb_dim == 0 || self.kernel == 0 || self.kernel % 2 == 0 {
            return bad("classifier widths must be positive and the kernel odd");
        }
        if self.clips_per_class == 0 || self.batch == 0 {
            return bad("classifier needs training clips and a positive batch");
        }
        if !(0.5..=10.0).contains(&self.min_s) || self.max_s < self.min_s || self.max_s > 10.0 {
            return bad("clip durations must lie in [0.5, 10] s");
        }
        if !(0.0..=1.0).contains(&self.resynth_prob) || !(self.lr > 0.0) {
            return bad("resynth_prob must be a probability and lr positive");
        }
        self.mel.validate()
    }
}

/// Log-mel standardized over the whole clip, stacked over its first time
/// difference: `[2·n_mels, T]`. Stereo is averaged to mono.
pub fn features(an: &MelAnalyzer, w: &Waveform) -> Result<Tensor32> {
    let mono = if w.n_channels() == 1 {
        w.clone()
    } else {
        let (l, r) = (w.channel(0), w.channel(1));
        Waveform::mono(w.sample_rate, l.iter().zip(r).map(|(a, b)| 0.5 * (a + b)).collect())?
    };
    let m = an.analyze(&mono)?;
    let x: Tensor<f64> = m.to_channels_first();
    let n = x.numel() as f64;
    let mean = x.data().iter().sum::<f64>() / n;
    let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s = var.sqrt().max(1e-3);
    let (d, t) = x.dims2()?;
    let mut out = vec![0.0f32; 2 * d * t];
    for m in 0..d {
        let row = x.row(m);
        for f in 0..t {
            out[m * t + f] = ((row[f] - mean) / s) as f32;
            if f > 0 {
                out[(d + m) * t + f] = ((row[f] - row[f - 1]) / s) as f32;
            }
        }
    }
    Tensor::new(&[2 * d, t], out)
}

#[derive(Clone, Debug)]
pub struct ToyClassifier {
    pub config: ClassifierConfig,
    pub ps: ParamStore32,
    analyzer: MelAnalyzer,
    conv1: Conv1d,
    conv2: Conv1d,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub final_loss: f64,
    pub heldout_accuracy: f64,
    pub heldout_clips: usize,
}

impl ToyClassifier {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::derive(config.seed, 31);
        let mut ps = ParamStore::new();
        let (c, k, p) = (config.channels, config.kernel, config.kernel / 2);
        let conv1 = Conv1d::new(&mut ps, "clf.conv1", 2 * config.mel.n_mels, c, k, 1, p, &mut rng);
        let conv2 = Conv1d::new(&mut ps, "clf.conv2", c, c, k, 2, p, &mut rng);
        let fc1 = Linear::new(&mut ps, "clf.fc1", 2 * c, config.emb_dim, true, &mut rng);
        let fc2 = Linear::new(&mut ps, "clf.fc2", config.emb_dim, N_CLASSES, true, &mut rng);
        let analyzer = MelAnalyzer::new(config.mel.clone())?;
        Ok(Self { config, ps, analyzer, conv1, conv2, fc1, fc2 })
    }

    pub fn analyzer(&self) -> &MelAnalyzer {
        &self.analyzer
    }

    /// `(embedding [1, emb_dim], logits [1, N_CLASSES])` for standardized features.
    /// Conv features are pooled over time by their first and second moments.
    pub fn forward(&self, g: &mut Graph<f32>, x: Var) -> Result<(Var, Var)> {
        let h = self.conv1.forward(g, &self.ps, x)?;
        let h = g.gelu(h)?;
        let h = self.conv2.forward(g, &self.ps, h)?;
        let h = g.gelu(h)?;
        let sq = g.square(h)?;
        let m1 = g.mean_axis(h, 1)?;
        let m2 = g.mean_axis(sq, 1)?;
        let pooled = g.concat(&[m1, m2], 0)?;
        let pooled = g.reshape(pooled, &[1, 2 * self.config.channels])?;
        let e = self.fc1.forward(g, &self.ps, pooled)?;
        let e = g.gelu(e)?;
        let logits = self.fc2.forward(g, &self.ps, e)?;
        Ok((e, logits))
    }

    pub fn embed_features(&self, x: &Tensor32) -> Result<(Vec<f64>, ClassifierPosterior)> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (e, logits) = self.forward(&mut g, xv)?;
        let p = g.softmax(logits)?;
        let emb = g.value(e).data().iter().map(|v| *v as f64).collect();
        let mut probs: Vec<f64> = g.value(p).data().iter().map(|v| *v as f64).collect();
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|v| *v /= s);
        Ok((emb, ClassifierPosterior::new(probs)?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CKPT_KIND, 0, serde_json::json!({ "classifier": self.config }));
        ck.put_params("clf/", &self.ps);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CKPT_KIND {
            return Err(Error::Input(format!("expected a {CKPT_KIND} checkpoint, got {}", ck.kind)));
        }
        let config: ClassifierConfig = serde_json::from_value(ck.config["classifier"].clone())?;
        let mut c = Self::new(config)?;
        ck.load_params("clf/", &mut c.ps)?;
        Ok(c)
    }

    /// Trains on freshly synthesized clips and scores a disjoint held-out set.
    /// Writes `step,loss` rows to `log`.
    pub fn train(config: ClassifierConfig, log: &mut dyn Write) -> Result<(Self, ClassifierReport)> {
        let mut clf = Self::new(config)?;
        let cfg = clf.config.clone();
        let train = labeled_set(&clf.analyzer, &cfg, cfg.clips_per_class, 0, cfg.resynth_prob)?;
        let held = labeled_set(&clf.analyzer, &cfg, cfg.heldout_per_class, 1, cfg.resynth_prob)?;
        let mut opt = AdamW::new(&clf.ps, AdamWConfig::default());
        let mut rng = SeededRng::derive(cfg.seed, 32);
        writeln!(log, "step,loss")?;
        let mut last = f64::NAN;
        for step in 0..cfg.steps {
            let mut g = Graph::new();
            let mut losses = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                let (x, y) = &train[rng.below(train.len())];
                let xv = g.constant(x.clone());
                let (_, logits) = clf.forward(&mut g, xv)?;
                let lp = g.log_softmax(logits)?;
                let pick = g.slice(lp, 1, *y, 1)?;
                let pick = g.reshape(pick, &[1])?;
                losses.push(g.neg(pick)?);
            }
            let all = g.concat(&losses, 0)?;
            let loss = g.mean(all)?;
            last = g.value(loss).item()? as f64;
            if !last.is_finite() {
                return Err(Error::Numeric(format!("non-finite classifier loss at step {step}")));
            }
            let grads = g.backward(loss)?;
            let mut gs = GradStore::zeros_like(&clf.ps);
            gs.accumulate(&g, &grads, &clf.ps)?;
            gs.clip(1.0);
            opt.step(&mut clf.ps, &gs, cfg.lr)?;
            writeln!(log, "{step},{last}")?;
        }
        let correct = held
            .iter()
            .map(|(x, y)| clf.embed_features(x).map(|(_, p)| usize::from(p.argmax() == *y)))
            .sum::<Result<usize>>()?;
        let report = ClassifierReport {
            final_loss: last,
            heldout_accuracy: correct as f64 / held.len() as f64,
            heldout_clips: held.len(),
        };
        Ok((clf, report))
    }
}

/// `per_class` clips of every class. `split` selects a disjoint seed range.
pub fn labeled_set(
    an: &MelAnalyzer,
    cfg: &ClassifierConfig,
    per_class: usize,
    split: u64,
    resynth_prob: f64,
) -> Result<Vec<(Tensor32, usize)>> {
    let mut rng = SeededRng::derive(cfg.seed, 40 + split);
    let mut out = Vec::with_capacity(per_class * N_CLASSES);
    for i in 0..per_class {
        for class in EventClass::ALL {
            let dur = cfg.min_s + (cfg.max_s - cfg.min_s) * rng.uniform();
            let seed = (split << 32) ^ ((i as u64) << 8) ^ class.index() as u64 ^ cfg.seed.wrapping_mul(0x9e37_79b9);
            let (w, _) = synth_event_clip(class, dur, seed, an.config.sample_rate)?;
            let w = if rng.bernoulli(resynth_prob) { griffin_lim(an, &an.analyze(&w)?, cfg.resynth_iters)? } else { w };
            out.push((features(an, &w)?, class.index()));
        }
    }
    Ok(out)
}

/// Embedding and class posterior for one waveform.
pub fn embed_and_classify(w: &Waveform, clf: &ToyClassifier) -> Result<(Vec<f64>, ClassifierPosterior)> {
    clf.embed_features(&features(&clf.analyzer, w)?)
}
