//! Phase reconstruction from a log-mel spectrogram.
//!
//! Mel energies are mapped back to linear-frequency power by non-negative
//! least squares (multiplicative updates against the filterbank), then
//! Griffin-Lim alternates between the target magnitude and a consistent
//! STFT, starting from zero phase so the result is deterministic.

use foley_core::{Error, Result};
use rustfft::num_complex::Complex64;

use crate::mel::{MelAnalyzer, MelSpectrogram};
use crate::stft::Spectrum;
use crate::wav::Waveform;

const NNLS_ITERS: usize = 200;

struct SparseFilter {
    start: usize,
    w: Vec<f64>,
}

fn sparse_bank(fb: &[Vec<f64>]) -> Vec<SparseFilter> {
    fb.iter()
        .map(|row| {
            let start = row.iter().position(|&v| v > 0.0).unwrap_or(0);
            let end = row.iter().rposition(|&v| v > 0.0).map_or(start, |e| e + 1);
            SparseFilter { start, w: row[start..end].to_vec() }
        })
        .collect()
}

/// Linear power per `(frame, bin)` whose mel projection approximates `m`.
/// Entries at the log floor are treated as zero energy.
pub fn mel_to_power(an: &MelAnalyzer, m: &MelSpectrogram) -> Vec<f64> {
    let bank = sparse_bank(&an.fb);
    let nb = an.stft.n_bins();
    let floor = m.config.log_min() + 1e-9;
    let mut out = vec![0.0; m.n_frames * nb];
    let mut p = vec![0.0; nb];
    let mut num = vec![0.0; nb];
    let mut den = vec![0.0; nb];
    let mut proj = vec![0.0; bank.len()];
    for t in 0..m.n_frames {
        let e: Vec<f64> = m.frame(t).iter().map(|&v| if v > floor { v.exp() } else { 0.0 }).collect();
        if e.iter().all(|&v| v == 0.0) {
            continue;
        }
        // numerator Mᵀe doubles as the starting point
        num.fill(0.0);
        for (f, ev) in bank.iter().zip(&e) {
            for (j, w) in f.w.iter().enumerate() {
                num[f.start + j] += w * ev;
            }
        }
        p.copy_from_slice(&num);
        for _ in 0..NNLS_ITERS {
            for (f, pr) in bank.iter().zip(proj.iter_mut()) {
                *pr = f.w.iter().zip(&p[f.start..]).map(|(a, b)| a * b).sum();
            }
            den.fill(0.0);
            for (f, pr) in bank.iter().zip(&proj) {
                for (j, w) in f.w.iter().enumerate() {
                    den[f.start + j] += w * pr;
                }
            }
            for k in 0..nb {
                if den[k] > 0.0 {
                    p[k] *= num[k] / den[k];
                }
            }
        }
        out[t * nb..(t + 1) * nb].copy_from_slice(&p);
    }
    out
}

/// Griffin-Lim reconstruction of `m`, `(frames − 1)·hop` samples long.
pub fn griffin_lim(an: &MelAnalyzer, m: &MelSpectrogram, iters: usize) -> Result<Waveform> {
    if iters == 0 {
        return Err(Error::Input("griffin-lim needs at least one iteration".into()));
    }
    if m.config != an.config {
        return Err(Error::Input("spectrogram and analyzer configs differ".into()));
    }
    let nb = an.stft.n_bins();
    let mag: Vec<f64> = mel_to_power(an, m).into_iter().map(f64::sqrt).collect();
    let len = (m.n_frames.max(2) - 1) * an.config.hop;
    if len < an.config.n_fft {
        return Err(Error::Input(format!("{} frames are too few to invert", m.n_frames)));
    }
    let mut spec = Spectrum {
        n_frames: m.n_frames,
        n_bins: nb,
        data: mag.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
    };
    let mut x = an.stft.inverse(&spec, len)?;
    for _ in 1..iters {
        let est = an.stft.forward(&x)?;
        for ((s, e), &a) in spec.data.iter_mut().zip(&est.data).zip(&mag) {
            let n = e.norm();
            *s = if n > 1e-12 { e * (a / n) } else { Complex64::new(a, 0.0) };
        }
        x = an.stft.inverse(&spec, len)?;
    }
    Waveform::clipped(an.config.sample_rate, vec![x])
}

pub fn griffin_lim_invert(m: &MelSpectrogram, iters: usize) -> Result<Waveform> {
    griffin_lim(&MelAnalyzer::new(m.config.clone())?, m, iters)
}
