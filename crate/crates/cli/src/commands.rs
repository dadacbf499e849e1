use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use foley_codec::{render_stereo, training_tensors, CodecConfig, CodecModel, CodecTrainConfig, CodecTrainer, PlannedDecoder};
use foley_core::ckpt::Checkpoint;
use foley_core::infer::{bench_compare, write_bench_csv, BenchRow};
use foley_core::{Error, Result, SeededRng, Tensor, Tensor32};
use foley_dsp::{griffin_lim, wav_write, EventTrack, MelAnalyzer, MelSpectrogram, Waveform};
use foley_flow::{
    ConditionBundle, DurationSpec, FlowExample, FlowTrainer, LatentStats, ModelConfig, TrainConfig, TrainedFlow, Vocab,
};
use foley_metrics::classifier::ClassifierReport;
use foley_metrics::{evaluate_manifest, ClassifierConfig, EvalReport, MetricConfig, ToyClassifier};
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, Item};
use crate::Settings;

pub const CODEC_CKPT: &str = "codec.ckpt";
pub const CODEC_CSV: &str = "codec_loss.csv";
pub const FLOW_CKPT: &str = "flow.ckpt";
pub const FLOW_CSV: &str = "flow_loss.csv";

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn mels_of(an: &MelAnalyzer, items: &[Item]) -> Result<Vec<MelSpectrogram>> {
    items
        .iter()
        .map(|it| {
            if it.wave.sample_rate != an.config.sample_rate {
                return Err(Error::Input(format!(
                    "{} is sampled at {} Hz, the codec expects {}",
                    it.row.id, it.wave.sample_rate, an.config.sample_rate
                )));
            }
            an.analyze(&it.wave)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CodecSummary {
    pub steps: u64,
    pub clips: usize,
    pub mse_before: f64,
    pub mse_after: f64,
    pub stereo_loss: f64,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

/// Trains the codec on every clip of `manifest`; writes the checkpoint and loss CSV into `out`.
pub fn train_codec(settings: &Settings, manifest: &Path, out: &Path, seed: Option<u64>) -> Result<CodecSummary> {
    let codec: CodecConfig = settings.section("codec")?;
    let mut cfg: CodecTrainConfig = settings.section("codec_train")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let items = DatasetManifest::read(manifest)?.load_items()?;
    let an = MelAnalyzer::new(codec.mel.clone())?;
    let mels = mels_of(&an, &items)?;
    let data = training_tensors(&mels, cfg.crop_frames)?;
    std::fs::create_dir_all(out)?;
    let mut trainer = CodecTrainer::new(codec, cfg)?;
    let mse_before = trainer.model.eval_mse(&mels)?;
    let loss_csv = out.join(CODEC_CSV);
    trainer.run(&data, &mut csv_writer(&loss_csv)?)?;
    let stereo_loss = trainer.train_stereo(&data)?;
    let mse_after = trainer.model.eval_mse(&mels)?;
    let checkpoint = out.join(CODEC_CKPT);
    trainer.checkpoint()?.save(&checkpoint)?;
    Ok(CodecSummary { steps: trainer.step(), clips: items.len(), mse_before, mse_after, stereo_loss, checkpoint, loss_csv })
}

/// Posterior-mean latent `[T, d]` of one clip.
pub fn clip_latent(codec: &CodecModel, mel: &MelSpectrogram) -> Result<Tensor<f64>> {
    Ok(codec.vae.encode_mel(&codec.gen, mel)?.mu.cast())
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowSummary {
    pub steps: u64,
    pub clips: usize,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

/// Flow model config with the latent width taken from the codec.
pub fn flow_model_config(settings: &Settings, codec: &CodecModel) -> Result<ModelConfig> {
    let mut cfg: ModelConfig = settings.section("flow")?;
    cfg.d_latent = codec.config().d_latent;
    cfg.validate()?;
    Ok(cfg)
}

pub fn flow_examples(codec: &CodecModel, cfg: &ModelConfig, items: &[Item]) -> Result<Vec<FlowExample>> {
    let an = MelAnalyzer::new(codec.config().mel.clone())?;
    let vocab = Vocab::synthetic();
    let mels = mels_of(&an, items)?;
    items
        .iter()
        .zip(&mels)
        .map(|(it, mel)| {
            let x1 = clip_latent(codec, mel)?;
            let full = ConditionBundle::from_event_track(&it.track, &it.row.caption, &vocab, it.wave.duration_s(), cfg)?;
            let mask = it.row.modality_mask;
            Ok(FlowExample { x1, bundle: full.dropped(!mask.has_text(), !mask.has_vision()) })
        })
        .collect()
}

/// Trains the flow model on codec latents of every clip of `manifest`.
pub fn train_flow(
    settings: &Settings,
    manifest: &Path,
    codec_ckpt: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<FlowSummary> {
    let codec = CodecModel::from_checkpoint(&Checkpoint::load(codec_ckpt)?)?;
    let cfg = flow_model_config(settings, &codec)?;
    let mut tcfg: TrainConfig = settings.section("flow_train")?;
    if let Some(s) = seed {
        tcfg.seed = s;
    }
    let items = DatasetManifest::read(manifest)?.load_items()?;
    let data = flow_examples(&codec, &cfg, &items)?;
    let stats = LatentStats::fit(&data.iter().map(|e| &e.x1).collect::<Vec<_>>())?;
    std::fs::create_dir_all(out)?;
    let mut trainer = FlowTrainer::new(cfg, tcfg, stats)?;
    let loss_csv = out.join(FLOW_CSV);
    let reports = trainer.run(&data, &mut csv_writer(&loss_csv)?)?;
    let checkpoint = out.join(FLOW_CKPT);
    trainer.checkpoint()?.save(&checkpoint)?;
    Ok(FlowSummary {
        steps: trainer.step(),
        clips: items.len(),
        final_loss: reports.last().map_or(f64::NAN, |r| r.loss_cfm),
        checkpoint,
        loss_csv,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub gl_iters: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { gl_iters: 32 }
    }
}

/// What a generated clip is conditioned on. Absent streams use the learned empty embeddings.
#[derive(Clone, Debug, Default)]
pub struct Condition {
    pub caption: Option<String>,
    pub event_track: Option<PathBuf>,
    pub seconds_total: f64,
}

impl Condition {
    pub fn bundle(&self, cfg: &ModelConfig) -> Result<ConditionBundle> {
        let vocab = Vocab::synthetic();
        let caption = self.caption.as_deref().unwrap_or("");
        match &self.event_track {
            Some(p) => ConditionBundle::from_event_track(&EventTrack::read(p)?, caption, &vocab, self.seconds_total, cfg),
            None => {
                let mut b = ConditionBundle::unconditional(DurationSpec::covering(self.seconds_total));
                let tokens = vocab.tokenize(caption);
                if !tokens.is_empty() {
                    b.text = Some(tokens);
                    b.has_text = true;
                }
                Ok(b)
            }
        }
    }
}

fn fit_length(w: &Waveform, n: usize) -> Result<Waveform> {
    let chans = (0..w.n_channels())
        .map(|c| {
            let mut v = w.channel(c).to_vec();
            v.resize(n, 0.0);
            v
        })
        .collect();
    Waveform::new(w.sample_rate, chans)
}

/// Mel frames and latent frames spanning `seconds` of audio.
pub fn frames_for(codec: &CodecConfig, seconds: f64) -> (usize, usize) {
    let samples = (seconds * codec.mel.sample_rate as f64).round() as usize;
    let n_mel = 1 + samples / codec.mel.hop;
    (n_mel, n_mel.div_ceil(codec.time_compression))
}

#[derive(Clone, Debug, Serialize)]
pub struct GenerateSummary {
    pub samples: usize,
    pub channels: usize,
    pub latent_frames: usize,
    pub out: PathBuf,
}

/// Samples a latent, decodes it to a mel, optionally splits it into stereo,
/// inverts with Griffin-Lim and writes a WAV of exactly `seconds_total`.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    settings: &Settings,
    flow_ckpt: &Path,
    codec_ckpt: &Path,
    cond: &Condition,
    seed: u64,
    steps: usize,
    stereo: bool,
    out: &Path,
) -> Result<GenerateSummary> {
    let gcfg: GenerateConfig = settings.section("generate")?;
    let codec = CodecModel::from_checkpoint(&Checkpoint::load(codec_ckpt)?)?;
    let flow = TrainedFlow::from_checkpoint(&Checkpoint::load(flow_ckpt)?)?;
    let mcfg = &flow.model.config;
    if mcfg.d_latent != codec.config().d_latent {
        return Err(Error::Input(format!(
            "flow model emits {} latent channels, codec expects {}",
            mcfg.d_latent,
            codec.config().d_latent
        )));
    }
    if !(cond.seconds_total > 0.0 && cond.seconds_total <= mcfg.max_seconds as f64) {
        return Err(Error::Input(format!("seconds_total {} outside (0, {}]", cond.seconds_total, mcfg.max_seconds)));
    }
    let (_, n_lat) = frames_for(codec.config(), cond.seconds_total);
    let bundle = cond.bundle(mcfg)?;
    let z = flow.generate(&bundle, n_lat, seed, steps, None)?;
    let z: Tensor32 = z.cast();
    let mel = codec.vae.decode_latent(&codec.gen, &z)?;
    let an = MelAnalyzer::new(codec.config().mel.clone())?;
    let wave = if stereo {
        let s = codec.stereo.predict(&codec.sps, &mel)?;
        render_stereo(&an, &mel, &s, gcfg.gl_iters)?.1
    } else {
        griffin_lim(&an, &mel, gcfg.gl_iters)?
    };
    let samples = (cond.seconds_total * an.config.sample_rate as f64).round() as usize;
    let wave = fit_length(&wave, samples)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    wav_write(out, &wave)?;
    Ok(GenerateSummary { samples, channels: wave.n_channels(), latent_frames: n_lat, out: out.to_path_buf() })
}

/// Scores an evaluation manifest. Without a classifier checkpoint a default
/// toy classifier is trained first.
pub fn evaluate(
    settings: &Settings,
    manifest: &Path,
    classifier: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<EvalReport> {
    let mcfg: MetricConfig = settings.section("eval")?;
    let clf = match classifier {
        Some(p) => ToyClassifier::from_checkpoint(&Checkpoint::load(p)?)?,
        None => {
            let mut c: ClassifierConfig = settings.section("classifier")?;
            if let Some(s) = seed {
                c.seed = s;
            }
            ToyClassifier::train(c, &mut std::io::sink())?.0
        }
    };
    let report = evaluate_manifest(manifest, Some(&clf), &mcfg)?;
    std::fs::write(out, serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

pub fn train_classifier(settings: &Settings, out: &Path, log: Option<&Path>, seed: Option<u64>) -> Result<ClassifierReport> {
    let mut c: ClassifierConfig = settings.section("classifier")?;
    if let Some(s) = seed {
        c.seed = s;
    }
    let (clf, report) = match log {
        Some(p) => ToyClassifier::train(c, &mut csv_writer(p)?)?,
        None => ToyClassifier::train(c, &mut std::io::sink())?,
    };
    clf.to_checkpoint().save(out)?;
    Ok(report)
}

fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor32> {
    Tensor::new(shape, (0..shape.iter().product()).map(|_| rng.normal() as f32).collect())
}

/// Benchmarks every planned decoder convolution against the direct loop, then
/// the whole planned decoder (`k = 0`) against the graph decoder.
pub fn bench_infer(codec_ckpt: &Path, fixed_len: usize, trials: usize, seed: u64, out: &Path) -> Result<Vec<BenchRow>> {
    if fixed_len < 2 {
        return Err(Error::Input(format!("fixed_len must be at least 2, got {fixed_len}")));
    }
    let codec = CodecModel::from_checkpoint(&Checkpoint::load(codec_ckpt)?)?;
    let planned = PlannedDecoder::new(&codec.vae, &codec.gen, fixed_len)?;
    let mut rng = SeededRng::derive(seed, 60);
    let mut rows = Vec::new();
    for (layer, fl) in planned.bench_layers() {
        let c_in = layer.kernel.dim(1);
        let x = random_tensor(&[c_in, (fl * 3 / 4).max(1)], &mut rng)?;
        rows.extend(bench_compare(&[layer], &[x], fl, trials)?);
    }
    let n = (fixed_len * 3 / 4).max(1);
    let z = random_tensor(&[n, codec.config().d_latent], &mut rng)?;
    let (mut tn, mut tg, mut dev) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for _ in 0..trials.max(1) {
        let s = Instant::now();
        let a = codec.vae.decode_latent(&codec.gen, &z)?;
        tn = tn.min(s.elapsed().as_secs_f64() * 1e3);
        let s = Instant::now();
        let b = planned.decode_latent(&z)?;
        tg = tg.min(s.elapsed().as_secs_f64() * 1e3);
        dev = a.data().iter().zip(b.data()).fold(dev, |m, (x, y)| m.max((x - y).abs()));
    }
    rows.push(BenchRow { layer: "decoder".into(), k: 0, stride: 1, t: fixed_len, naive_ms: tn, gemm_ms: tg, max_abs_diff: dev });
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv_writer(out)?;
    write_bench_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(rows)
}
