//! Evaluation over a manifest of reference/estimate pairs.
//!
//! Manifest: one JSON object per line, `{"ref": path, "est": path}` with
//! optional `"ref_emb"`/`"est_emb"` pointing at precomputed classifier outputs
//! (`{"embedding": [..], "probs": [..]}`). Relative paths resolve against the
//! manifest's directory.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use foley_core::{Error, Result};
use foley_dsp::{wav_read, MelAnalyzer, Waveform};
use serde::{Deserialize, Serialize};

use crate::classifier::{embed_and_classify, ToyClassifier};
use crate::frechet::{frechet_distance, EmbeddingSet};
use crate::posterior::{kl_posterior, ClassifierPosterior};
use crate::signal::{lsd, mcd, mel_stft_loss, sdr, si_sdr, stft_magnitude, MetricConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    #[serde(rename = "ref")]
    pub reference: PathBuf,
    pub est: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_emb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_emb: Option<PathBuf>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<EvalPair>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut p: EvalPair = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let fix = |q: &mut PathBuf| {
            if q.is_relative() {
                *q = base.join(&*q);
            }
        };
        fix(&mut p.reference);
        fix(&mut p.est);
        p.ref_emb.as_mut().map(fix);
        p.est_emb.as_mut().map(fix);
        out.push(p);
    }
    if out.is_empty() {
        return Err(Error::Input(format!("{} lists no pairs", path.display())));
    }
    Ok(out)
}

/// Precomputed classifier output for one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub embedding: Vec<f64>,
    pub probs: Vec<f64>,
}

impl EmbeddingFile {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    #[serde(rename = "ref")]
    pub reference: String,
    pub est: String,
    pub si_sdr_db: f64,
    pub sdr_db: f64,
    pub lsd: f64,
    pub mcd_db: f64,
    pub mel_l1: f64,
    pub stft_l1: f64,
    pub ref_class: Option<usize>,
    pub est_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_probs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_pairs: usize,
    pub si_sdr_db: f64,
    pub sdr_db: f64,
    pub lsd: f64,
    pub mcd_db: f64,
    pub mel_l1: f64,
    pub stft_l1: f64,
    pub fd: Option<f64>,
    pub kl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: MetricConfig,
    pub embedding_source: String,
    pub conventions: Vec<String>,
    pub pairs: Vec<PairScores>,
    pub aggregate: Aggregate,
}

pub fn conventions() -> Vec<String> {
    [
        "si_sdr/sdr: dB, zero-mean projection for si_sdr, energy epsilon 1e-9, capped at +-100",
        "lsd: log10 power, floor 1e-10, RMS over bins per frame, mean over frames",
        "mcd: orthonormal DCT-II of ln mel energies, c1..c13, factor (10/ln10)*sqrt(2), no time warping",
        "mel_l1/stft_l1: mean absolute difference of ln mel energies / linear STFT magnitudes",
        "fd: Frechet distance between Gaussian fits of classifier embeddings (toy classifier unless external files given)",
        "kl: mean over pairs of sum p_ref*ln((p_ref+1e-10)/(p_est+1e-10))",
        "stereo inputs are averaged to mono",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn to_mono(w: Waveform) -> Result<Waveform> {
    if w.n_channels() == 1 {
        return Ok(w);
    }
    let (l, r) = (w.channel(0), w.channel(1));
    Waveform::mono(w.sample_rate, l.iter().zip(r).map(|(a, b)| 0.5 * (a + b)).collect())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Scores every pair. Classifier outputs come from the pair's embedding files
/// when both are given, otherwise from `clf`; without either, FD and KL are omitted.
pub fn evaluate_pairs(pairs: &[EvalPair], clf: Option<&ToyClassifier>, cfg: &MetricConfig) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(pairs.len());
    let (mut emb_ref, mut emb_est, mut post_ref, mut post_est) = (vec![], vec![], vec![], vec![]);
    let mut external = 0usize;
    for p in pairs {
        let r = to_mono(wav_read(&p.reference)?)?;
        let e = to_mono(wav_read(&p.est)?)?;
        if r.len() != e.len() {
            return Err(Error::Input(format!(
                "{} has {} samples, {} has {}",
                p.reference.display(),
                r.len(),
                p.est.display(),
                e.len()
            )));
        }
        let an = MelAnalyzer::new(cfg.mel(r.sample_rate))?;
        let outputs = match (&p.ref_emb, &p.est_emb, clf) {
            (Some(a), Some(b), _) => {
                external += 1;
                let (a, b) = (EmbeddingFile::read(a)?, EmbeddingFile::read(b)?);
                Some(((a.embedding, ClassifierPosterior::new(a.probs)?), (b.embedding, ClassifierPosterior::new(b.probs)?)))
            }
            (_, _, Some(c)) => Some((embed_and_classify(&r, c)?, embed_and_classify(&e, c)?)),
            _ => None,
        };
        let (mut rc, mut ec, mut rp, mut ep) = (None, None, None, None);
        if let Some(((er, pr), (ee, pe))) = outputs {
            rc = Some(pr.argmax());
            ec = Some(pe.argmax());
            rp = Some(pr.probs.clone());
            ep = Some(pe.probs.clone());
            emb_ref.push(er);
            emb_est.push(ee);
            post_ref.push(pr);
            post_est.push(pe);
        }
        scores.push(PairScores {
            reference: p.reference.display().to_string(),
            est: p.est.display().to_string(),
            si_sdr_db: si_sdr(&r, &e, cfg)?,
            sdr_db: sdr(&r, &e, cfg)?,
            lsd: lsd(&r, &e, cfg)?,
            mcd_db: mcd(&r, &e, cfg)?,
            mel_l1: mel_stft_loss(&an.analyze(&r)?, &an.analyze(&e)?)?,
            stft_l1: mel_stft_loss(&stft_magnitude(&r, cfg)?, &stft_magnitude(&e, cfg)?)?,
            ref_class: rc,
            est_class: ec,
            ref_probs: rp,
            est_probs: ep,
        });
    }
    let have = !emb_ref.is_empty() && emb_ref.len() == pairs.len();
    let (fd, kl) = if have {
        let fd = frechet_distance(&EmbeddingSet::from_samples(&emb_ref)?, &EmbeddingSet::from_samples(&emb_est)?)?;
        (Some(fd), Some(kl_posterior(&post_ref, &post_est)?))
    } else {
        (None, None)
    };
    let source = match (have, external) {
        (false, _) => "none",
        (true, 0) => "toy-classifier",
        (true, n) if n == pairs.len() => "external",
        _ => "mixed",
    };
    let aggregate = Aggregate {
        n_pairs: scores.len(),
        si_sdr_db: mean(scores.iter().map(|s| s.si_sdr_db)),
        sdr_db: mean(scores.iter().map(|s| s.sdr_db)),
        lsd: mean(scores.iter().map(|s| s.lsd)),
        mcd_db: mean(scores.iter().map(|s| s.mcd_db)),
        mel_l1: mean(scores.iter().map(|s| s.mel_l1)),
        stft_l1: mean(scores.iter().map(|s| s.stft_l1)),
        fd,
        kl,
    };
    Ok(EvalReport { config: cfg.clone(), embedding_source: source.into(), conventions: conventions(), pairs: scores, aggregate })
}

pub fn evaluate_manifest(path: &Path, clf: Option<&ToyClassifier>, cfg: &MetricConfig) -> Result<EvalReport> {
    evaluate_pairs(&read_manifest(path)?, clf, cfg)
}
