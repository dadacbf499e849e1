//! Waveform and spectral distances.
//!
//! Conventions: SI-SDR and SDR in dB with an absolute energy epsilon and a
//! ±100 dB cap; LSD uses log10 power with a 1e-10 floor; MCD uses the
//! orthonormal DCT-II of natural-log mel energies, coefficients 1..=13, scaled
//! by `(10/ln 10)·√2`, with frames compared one-to-one.

use foley_core::{Error, Result};
use foley_dsp::stft::Stft;
use foley_dsp::{MelAnalyzer, MelConfig, MelSpectrogram, Waveform};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub power_floor: f64,
    pub energy_eps: f64,
    pub db_cap: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { n_fft: 2048, hop: 512, n_mels: 80, n_mfcc: 13, power_floor: 1e-10, energy_eps: 1e-9, db_cap: 100.0 }
    }
}

impl MetricConfig {
    pub fn mel(&self, sample_rate: u32) -> MelConfig {
        MelConfig {
            sample_rate,
            n_fft: self.n_fft,
            hop: self.hop,
            n_mels: self.n_mels,
            f_min: 0.0,
            f_max: sample_rate as f64 / 2.0,
            log_floor: self.power_floor,
        }
    }
}

fn pair<'a>(r: &'a Waveform, e: &'a Waveform) -> Result<(&'a [f64], &'a [f64])> {
    let (a, b) = (r.samples()?, e.samples()?);
    if a.len() != b.len() {
        return Err(Error::Input(format!("reference has {} samples, estimate {}", a.len(), b.len())));
    }
    if r.sample_rate != e.sample_rate {
        return Err(Error::Input(format!("sample rates differ: {} vs {}", r.sample_rate, e.sample_rate)));
    }
    if a.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    Ok((a, b))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn capped_db(num: f64, den: f64, cfg: &MetricConfig) -> f64 {
    (10.0 * ((num + cfg.energy_eps) / (den + cfg.energy_eps)).log10()).clamp(-cfg.db_cap, cfg.db_cap)
}

/// Scale-invariant SDR in dB. Both signals are mean-removed first.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform, cfg: &MetricConfig) -> Result<f64> {
    let (r, e) = pair(reference, estimate)?;
    let (r, e) = (centered(r), centered(e));
    let rr = dot(&r, &r);
    if rr <= cfg.energy_eps {
        return Err(Error::Numeric("undefined metric: SI-SDR of a silent reference".into()));
    }
    let alpha = dot(&e, &r) / rr;
    let (mut ss, mut ee) = (0.0, 0.0);
    for (x, y) in r.iter().zip(&e) {
        let s = alpha * x;
        ss += s * s;
        ee += (y - s) * (y - s);
    }
    Ok(capped_db(ss, ee, cfg))
}

/// `10·log10(‖ref‖² / ‖ref − est‖²)` in dB.
pub fn sdr(reference: &Waveform, estimate: &Waveform, cfg: &MetricConfig) -> Result<f64> {
    let (r, e) = pair(reference, estimate)?;
    let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(capped_db(dot(r, r), err, cfg))
}

/// Log-spectral distance: per-frame RMS over bins of the log10 power
/// difference, averaged over frames.
pub fn lsd(reference: &Waveform, estimate: &Waveform, cfg: &MetricConfig) -> Result<f64> {
    let (r, e) = pair(reference, estimate)?;
    let stft = Stft::new(cfg.n_fft, cfg.hop)?;
    let (pr, pe) = (stft.forward(r)?, stft.forward(e)?);
    let nb = pr.n_bins;
    let (lr, le) = (pr.power(), pe.power());
    let log = |p: f64| p.max(cfg.power_floor).log10();
    let mut total = 0.0;
    for t in 0..pr.n_frames {
        let s: f64 = (t * nb..(t + 1) * nb).map(|i| (log(lr[i]) - log(le[i])).powi(2)).sum();
        total += (s / nb as f64).sqrt();
    }
    Ok(total / pr.n_frames as f64)
}

/// Orthonormal DCT-II coefficients `first..first + n` of `x`.
pub fn dct2(x: &[f64], first: usize, n: usize) -> Vec<f64> {
    let len = x.len() as f64;
    (first..first + n)
        .map(|k| {
            let s = if k == 0 { (1.0 / len).sqrt() } else { (2.0 / len).sqrt() };
            let kf = k as f64;
            s * x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * kf * (2.0 * i as f64 + 1.0) / (2.0 * len)).cos())
                .sum::<f64>()
        })
        .collect()
}

/// Cepstra `c_1..c_n` per frame from a log-mel spectrogram.
pub fn mfcc(m: &MelSpectrogram, n: usize) -> Vec<Vec<f64>> {
    (0..m.n_frames).map(|t| dct2(m.frame(t), 1, n)).collect()
}

/// Mel-cepstral distortion without time warping.
pub fn mcd(reference: &Waveform, estimate: &Waveform, cfg: &MetricConfig) -> Result<f64> {
    let (_, _) = pair(reference, estimate)?;
    if cfg.n_mfcc >= cfg.n_mels {
        return Err(Error::Config(format!("{} cepstra from {} mel bands", cfg.n_mfcc, cfg.n_mels)));
    }
    let an = MelAnalyzer::new(cfg.mel(reference.sample_rate))?;
    let (cr, ce) = (mfcc(&an.analyze(reference)?, cfg.n_mfcc), mfcc(&an.analyze(estimate)?, cfg.n_mfcc));
    let k = 10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2;
    let sum: f64 = cr
        .iter()
        .zip(&ce)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    Ok(k * sum / cr.len() as f64)
}

/// Linear STFT magnitudes, `frames × bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Magnitude {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<f64>,
}

pub fn stft_magnitude(w: &Waveform, cfg: &MetricConfig) -> Result<Magnitude> {
    let spec = Stft::new(cfg.n_fft, cfg.hop)?.forward(w.samples()?)?;
    Ok(Magnitude { n_frames: spec.n_frames, n_bins: spec.n_bins, data: spec.magnitude() })
}

/// A `frames × bins` grid of spectral values.
pub trait Spectral {
    fn grid(&self) -> (usize, usize);
    fn values(&self) -> &[f64];
}

impl Spectral for MelSpectrogram {
    fn grid(&self) -> (usize, usize) {
        (self.n_frames, self.n_mels())
    }
    fn values(&self) -> &[f64] {
        self.data()
    }
}

impl Spectral for Magnitude {
    fn grid(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Mean absolute difference over all bins.
pub fn mel_stft_loss<S: Spectral + ?Sized>(reference: &S, estimate: &S) -> Result<f64> {
    if reference.grid() != estimate.grid() {
        return Err(Error::Input(format!("spectra {:?} and {:?} differ in shape", reference.grid(), estimate.grid())));
    }
    let (a, b) = (reference.values(), estimate.values());
    if a.is_empty() {
        return Err(Error::Input("empty spectrogram".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}
