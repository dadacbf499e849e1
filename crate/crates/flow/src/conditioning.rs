//! Toy encoders for text, vision and sync streams, learned placeholders for
//! absent modalities, duration tables and the fused global condition.

use std::fmt;
use std::str::FromStr;

use foley_core::nn::{Embedding, Linear, ParamId, ParamStore};
use foley_core::{Error, Graph, Result, Scalar, SeededRng, Tensor, Var};
use foley_dsp::synth::vocabulary;
use foley_dsp::EventTrack;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;

/// Word list for captions; index 0 is reserved for unknown words.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
}

impl Vocab {
    pub const UNK: usize = 0;

    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut v = vec!["<unk>".to_string()];
        v.extend(words.iter().map(|w| w.as_ref().to_lowercase()));
        Self { words: v }
    }

    /// The caption vocabulary of the synthetic corpus.
    pub fn synthetic() -> Self {
        Self::new(&vocabulary())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        let w = word.to_lowercase();
        self.words.iter().position(|x| *x == w).unwrap_or(Self::UNK)
    }

    pub fn tokenize(&self, caption: &str) -> Vec<usize> {
        caption.split_whitespace().map(|w| self.id(w)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Text,
    Vision,
    Sync,
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Text => "text",
            Self::Vision => "vision",
            Self::Sync => "sync",
        })
    }
}

impl FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "vision" => Ok(Self::Vision),
            "sync" => Ok(Self::Sync),
            other => Err(Error::Input(format!("unknown modality kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationSpec {
    pub seconds_start: usize,
    pub seconds_total: usize,
}

impl DurationSpec {
    pub fn new(seconds_start: usize, seconds_total: usize) -> Self {
        Self { seconds_start, seconds_total }
    }

    /// Whole seconds covering `duration_s`, starting at 0.
    pub fn covering(duration_s: f64) -> Self {
        Self::new(0, (duration_s - 1e-9).ceil().max(1.0) as usize)
    }

    pub fn validate(&self, max_seconds: usize) -> Result<()> {
        if self.seconds_total < 1 || self.seconds_total > max_seconds || self.seconds_start > max_seconds {
            return Err(Error::Input(format!(
                "duration ({}, {}) outside the per-second tables (total 1..={max_seconds}, start 0..={max_seconds})",
                self.seconds_start, self.seconds_total
            )));
        }
        Ok(())
    }
}

/// Conditioning inputs for one sample. Feature matrices are `[frames, feat_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    pub text: Option<Vec<usize>>,
    pub vision: Option<Tensor<f64>>,
    pub sync: Option<Tensor<f64>>,
    pub has_text: bool,
    pub has_vision: bool,
    pub duration: DurationSpec,
}

impl ConditionBundle {
    /// Everything absent except the duration.
    pub fn unconditional(duration: DurationSpec) -> Self {
        Self { text: None, vision: None, sync: None, has_text: false, has_vision: false, duration }
    }

    /// Caption tokens plus event-track rasters at the configured vision and sync rates.
    pub fn from_event_track(
        track: &EventTrack,
        caption: &str,
        vocab: &Vocab,
        duration_s: f64,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        if !(duration_s > 0.0) {
            return Err(Error::Input(format!("duration must be positive, got {duration_s}")));
        }
        let raster = |rate: f64| -> Result<Tensor<f64>> {
            let n = ((duration_s * rate).ceil() as usize).max(1);
            Tensor::new(&[n, cfg.feat_dim], track.raster(rate, n))
        };
        let tokens = vocab.tokenize(caption);
        let has_text = !tokens.is_empty();
        Ok(Self {
            text: has_text.then_some(tokens),
            vision: Some(raster(cfg.rope.vision_rate)?),
            sync: Some(raster(cfg.rope.sync_rate)?),
            has_text,
            has_vision: true,
            duration: DurationSpec::covering(duration_s),
        })
    }

    /// Copy with the given modalities marked absent.
    pub fn dropped(&self, drop_text: bool, drop_vision: bool) -> Self {
        let mut b = self.clone();
        b.has_text &= !drop_text;
        b.has_vision &= !drop_vision;
        b
    }

    pub fn text_present(&self) -> bool {
        self.has_text && self.text.is_some()
    }

    pub fn vision_present(&self) -> bool {
        self.has_vision && self.vision.is_some()
    }

    /// Sync features follow the vision stream; both come from the video.
    pub fn sync_present(&self) -> bool {
        self.vision_present() && self.sync.is_some()
    }
}

/// Raw input handed to [`Conditioner::encode_or_placeholder`].
#[derive(Clone, Copy, Debug)]
pub enum ModalityInput<'a> {
    Tokens(&'a [usize]),
    Features(&'a Tensor<f64>),
}

/// Frequency scale applied to `t ∈ [0, 1]` before the sinusoids.
pub const TIME_SCALE: f64 = 100.0;
const TIME_BASE: f64 = 10_000.0;

fn time_freqs(dim: usize) -> Vec<f64> {
    let half = dim / 2;
    (0..half).map(|k| TIME_SCALE * TIME_BASE.powf(-(k as f64) / half as f64)).collect()
}

/// `[sin(ω_k t) ; cos(ω_k t)]` with `ω_k = 100·10000^(−k/(dim/2))`, `k < dim/2`.
pub fn timestep_embedding(t: f64, dim: usize) -> Vec<f64> {
    let f = time_freqs(dim);
    let mut out: Vec<f64> = f.iter().map(|w| (w * t).sin()).collect();
    out.extend(f.iter().map(|w| (w * t).cos()));
    out.resize(dim, 0.0);
    out
}

/// `sqrt(Σ ω_k²)`, a Lipschitz constant of [`timestep_embedding`] in `t`.
pub fn timestep_lipschitz(dim: usize) -> f64 {
    time_freqs(dim).iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// Indices `floor(i·src/target)` used to repeat `src` frames up to `target`.
pub fn nearest_indices(src: usize, target: usize) -> Vec<usize> {
    (0..target).map(|i| i * src / target).collect()
}

#[derive(Clone, Debug)]
struct Mlp2 {
    l1: Linear,
    l2: Linear,
}

impl Mlp2 {
    fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, d_in: usize, d_mid: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            l1: Linear::new(ps, &format!("{name}.l1"), d_in, d_mid, true, rng),
            l2: Linear::new(ps, &format!("{name}.l2"), d_mid, d_out, true, rng),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var, silu: bool) -> Result<Var> {
        let h = self.l1.forward(g, ps, x)?;
        let h = if silu { g.silu(h)? } else { g.gelu(h)? };
        self.l2.forward(g, ps, h)
    }
}

/// Everything the transformer needs from one [`ConditionBundle`].
#[derive(Clone, Copy, Debug)]
pub struct EncodedCondition {
    /// `[T_t, D]`
    pub text: Var,
    /// `[T_v, D]`
    pub vision: Var,
    /// `[T_audio, D]`
    pub align: Var,
    /// `[1, D]`
    pub global: Var,
}

#[derive(Clone, Debug)]
pub struct Conditioner {
    pub dim: usize,
    pub feat_dim: usize,
    pub max_seconds: usize,
    pub max_text_len: usize,
    pub max_vision_len: usize,
    text: Embedding,
    vision: Mlp2,
    sync: Mlp2,
    sync_proj: Linear,
    pub e_t: ParamId,
    pub e_v: ParamId,
    dur_start: Embedding,
    dur_total: Embedding,
    fuse: Mlp2,
}

impl Conditioner {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden();
        let rows = cfg.max_seconds + 1;
        let e_t = ps.add("cond.e_t", Tensor::<T>::randn(&[1, d], rng).map(|v| v * T::c(0.1)));
        let e_v = ps.add("cond.e_v", Tensor::<T>::randn(&[1, d], rng).map(|v| v * T::c(0.1)));
        Ok(Self {
            dim: d,
            feat_dim: cfg.feat_dim,
            max_seconds: cfg.max_seconds,
            max_text_len: cfg.max_text_len,
            max_vision_len: cfg.max_vision_len,
            text: Embedding::new(ps, "cond.text", cfg.vocab_size, d, rng),
            vision: Mlp2::new(ps, "cond.vision", cfg.feat_dim, d, d, rng),
            sync: Mlp2::new(ps, "cond.sync", cfg.feat_dim, d, d, rng),
            sync_proj: Linear::new(ps, "cond.sync_proj", d, d, true, rng),
            e_t,
            e_v,
            dur_start: Embedding::new(ps, "cond.dur_start", rows, d, rng),
            dur_total: Embedding::new(ps, "cond.dur_total", rows, d, rng),
            fuse: Mlp2::new(ps, "cond.fuse", 5 * d, d, d, rng),
        })
    }

    /// Encoder output for a present input, or the length-1 placeholder when absent.
    /// Sync shares the vision placeholder.
    pub fn encode_or_placeholder<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        kind: ModalityKind,
        raw: Option<ModalityInput<'_>>,
    ) -> Result<Var> {
        match (kind, raw) {
            (ModalityKind::Text, None) => Ok(g.param(ps, self.e_t)),
            (ModalityKind::Vision | ModalityKind::Sync, None) => Ok(g.param(ps, self.e_v)),
            (ModalityKind::Text, Some(ModalityInput::Tokens(ids))) => {
                if ids.is_empty() || ids.len() > self.max_text_len {
                    return Err(Error::Input(format!("{} text tokens, expected 1..={}", ids.len(), self.max_text_len)));
                }
                self.text.forward(g, ps, ids)
            }
            (ModalityKind::Vision | ModalityKind::Sync, Some(ModalityInput::Features(f))) => {
                let (n, c) = f.dims2()?;
                if c != self.feat_dim {
                    return Err(Error::Input(format!("{kind} features have {c} columns, expected {}", self.feat_dim)));
                }
                if n == 0 || (kind == ModalityKind::Vision && n > self.max_vision_len) {
                    return Err(Error::Input(format!("{n} {kind} frames, expected 1..={}", self.max_vision_len)));
                }
                let x = g.constant(f.cast());
                let mlp = if kind == ModalityKind::Vision { &self.vision } else { &self.sync };
                mlp.forward(g, ps, x, false)
            }
            (k, Some(_)) => Err(Error::Input(format!("wrong input type for the {k} encoder"))),
        }
    }

    /// Projects `f_sync[T_sync, D]` and repeats frames up to `target_len`.
    pub fn sync_project_upsample<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        f_sync: Var,
        target_len: usize,
    ) -> Result<Var> {
        if target_len < 1 {
            return Err(Error::Input("sync upsampling target length must be at least 1".into()));
        }
        let (n, _) = g.value(f_sync).dims2()?;
        let p = self.sync_proj.forward(g, ps, f_sync)?;
        if n == target_len {
            return Ok(p);
        }
        g.gather(p, &nearest_indices(n, target_len))
    }

    /// `[1, 2D]`: start-table row, then total-table row.
    pub fn duration_embed<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, d: &DurationSpec) -> Result<Var> {
        d.validate(self.max_seconds)?;
        let s = self.dur_start.forward(g, ps, &[d.seconds_start])?;
        let t = self.dur_total.forward(g, ps, &[d.seconds_total])?;
        g.concat(&[s, t], 1)
    }

    pub fn timestep<T: Scalar>(&self, g: &mut Graph<T>, t: f64) -> Result<Var> {
        let e = timestep_embedding(t, self.dim);
        Ok(g.constant(Tensor::from_f64(&[1, self.dim], &e)?))
    }

    /// `[1, D]` from pooled text `[1, D]`, pooled vision `[1, D]`, durations `[1, 2D]` and `t_emb [1, D]`.
    pub fn fuse_global<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        pooled_text: Var,
        pooled_vision: Var,
        dur: Var,
        t_emb: Var,
    ) -> Result<Var> {
        let x = g.concat(&[pooled_text, pooled_vision, dur, t_emb], 1)?;
        self.fuse.forward(g, ps, x, true)
    }

    fn pool<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (_, d) = g.value(x).dims2()?;
        let m = g.mean_axis(x, 0)?;
        g.reshape(m, &[1, d])
    }

    /// Runs the encoders, the sync projection to `audio_len` frames and the global fusion at flow time `t`.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        b: &ConditionBundle,
        t: f64,
        audio_len: usize,
    ) -> Result<EncodedCondition> {
        let text_in = if b.text_present() { b.text.as_deref().map(ModalityInput::Tokens) } else { None };
        let vis_in = if b.vision_present() { b.vision.as_ref().map(ModalityInput::Features) } else { None };
        let sync_in = if b.sync_present() { b.sync.as_ref().map(ModalityInput::Features) } else { None };
        let text = self.encode_or_placeholder(g, ps, ModalityKind::Text, text_in)?;
        let vision = self.encode_or_placeholder(g, ps, ModalityKind::Vision, vis_in)?;
        let sync = self.encode_or_placeholder(g, ps, ModalityKind::Sync, sync_in)?;
        let align = self.sync_project_upsample(g, ps, sync, audio_len)?;
        let pt = Self::pool(g, text)?;
        let pv = Self::pool(g, vision)?;
        let dur = self.duration_embed(g, ps, &b.duration)?;
        let te = self.timestep(g, t)?;
        let global = self.fuse_global(g, ps, pt, pv, dur, te)?;
        Ok(EncodedCondition { text, vision, align, global })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_indices_repeat_in_order() {
        assert_eq!(nearest_indices(2, 4), vec![0, 0, 1, 1]);
        assert_eq!(nearest_indices(3, 3), vec![0, 1, 2]);
    }

    #[test]
    fn timestep_zero_is_sin0_cos1() {
        let e = timestep_embedding(0.0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn unknown_kind_is_input_error() {
        assert!(matches!("audio".parse::<ModalityKind>(), Err(Error::Input(_))));
        assert_eq!("sync".parse::<ModalityKind>().unwrap(), ModalityKind::Sync);
    }
}
