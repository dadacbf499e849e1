//! Centered short-time Fourier transform with a periodic Hann window and
//! reflect padding, and its weighted overlap-add inverse.

use std::f64::consts::PI;
use std::sync::Arc;

use foley_core::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Mirrors `x` by `pad` samples on both ends (edge sample not repeated).
pub fn reflect_pad(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if pad >= x.len() {
        return Err(Error::Input(format!("reflect padding {pad} needs more than {} samples", x.len())));
    }
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| x[n - 1 - i]));
    Ok(out)
}

/// Reusable FFT plans for one `(n_fft, hop)` pair.
#[derive(Clone)]
pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("n_fft", &self.n_fft).field("hop", &self.hop).finish()
    }
}

/// `frames × (n_fft/2 + 1)` complex spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        if n_fft < 2 || hop == 0 || hop > n_fft {
            return Err(Error::Config(format!("invalid STFT n_fft={n_fft} hop={hop}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_fft,
            hop,
            window: hann(n_fft),
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for `len` samples: `1 + len / hop`.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrum> {
        if x.len() < self.n_fft {
            return Err(Error::Input(format!(
                "signal of {} samples is shorter than one frame ({})",
                x.len(),
                self.n_fft
            )));
        }
        let padded = reflect_pad(x, self.n_fft / 2)?;
        let n_frames = self.n_frames(x.len());
        let nb = self.n_bins();
        let mut data = Vec::with_capacity(n_frames * nb);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for t in 0..n_frames {
            let seg = &padded[t * self.hop..t * self.hop + self.n_fft];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new(s * w, 0.0);
            }
            self.fwd.process(&mut buf);
            data.extend_from_slice(&buf[..nb]);
        }
        Ok(Spectrum { n_frames, n_bins: nb, data })
    }

    /// Weighted overlap-add inverse producing `len` samples.
    pub fn inverse(&self, spec: &Spectrum, len: usize) -> Result<Vec<f64>> {
        if spec.n_bins != self.n_bins() {
            return Err(Error::Dimension(format!("spectrum has {} bins, expected {}", spec.n_bins, self.n_bins())));
        }
        let pad = self.n_fft / 2;
        let total = (spec.n_frames - 1) * self.hop + self.n_fft;
        let mut out = vec![0.0; total];
        let mut wsum = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let scale = 1.0 / self.n_fft as f64;
        for t in 0..spec.n_frames {
            let fr = spec.frame(t);
            buf[..fr.len()].copy_from_slice(fr);
            // Hermitian completion of the one-sided spectrum
            for k in fr.len()..self.n_fft {
                buf[k] = fr[self.n_fft - k].conj();
            }
            self.inv.process(&mut buf);
            let base = t * self.hop;
            for i in 0..self.n_fft {
                let w = self.window[i];
                out[base + i] += buf[i].re * scale * w;
                wsum[base + i] += w * w;
            }
        }
        let mut y = vec![0.0; len];
        for (i, v) in y.iter_mut().enumerate() {
            let j = i + pad;
            if j < total && wsum[j] > 1e-10 {
                *v = out[j] / wsum[j];
            }
        }
        Ok(y)
    }
}
