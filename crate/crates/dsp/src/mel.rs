//! Log-mel spectrograms: power STFT, HTK-scale triangular filters with unit
//! area (in Hz), natural log with a floor.

use foley_core::{Error, Result, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::stft::Stft;
use crate::wav::Waveform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { sample_rate: 44_100, n_fft: 2048, hop: 512, n_mels: 80, f_min: 0.0, f_max: 22_050.0, log_floor: 1e-5 }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hop == 0 || self.hop > self.n_fft {
            return bad(format!("hop {} must be in 1..={}", self.hop, self.n_fft));
        }
        if self.f_max > self.sample_rate as f64 / 2.0 + 1e-9 || self.f_min < 0.0 || self.f_min >= self.f_max {
            return bad(format!("need 0 <= f_min < f_max <= sr/2, got {}..{}", self.f_min, self.f_max));
        }
        if self.n_mels == 0 || !(self.log_floor > 0.0) {
            return bad("n_mels and log_floor must be positive".into());
        }
        Ok(())
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn log_min(&self) -> f64 {
        self.log_floor.ln()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Band edges: `n_mels + 2` frequencies equally spaced on the mel scale.
pub fn band_edges(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let n = cfg.n_mels + 1;
    (0..=n).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64)).collect()
}

pub fn center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    band_edges(cfg)[1..=cfg.n_mels].to_vec()
}

/// `n_mels × (n_fft/2 + 1)` filter weights.
pub fn filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let edges = band_edges(cfg);
    let nb = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (r - l);
            (0..nb)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

/// `frames × n_mels` log-mel energies, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub config: MelConfig,
    pub n_frames: usize,
    data: Vec<f64>,
}

impl MelSpectrogram {
    /// Wraps log values, raising anything below `ln(log_floor)` to the floor.
    pub fn from_log(config: MelConfig, n_frames: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != n_frames * config.n_mels {
            return Err(Error::Dimension(format!(
                "{} values for {n_frames} frames of {} bands",
                data.len(),
                config.n_mels
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite mel value {v}")));
        }
        let lo = config.log_min();
        data.iter_mut().for_each(|v| *v = v.max(lo));
        Ok(Self { config, n_frames, data })
    }

    /// A spectrogram at the floor everywhere.
    pub fn silent(config: MelConfig, n_frames: usize) -> Self {
        let data = vec![config.log_min(); n_frames * config.n_mels];
        Self { config, n_frames, data }
    }

    pub fn n_mels(&self) -> usize {
        self.config.n_mels
    }

    pub fn frame_rate(&self) -> f64 {
        self.config.frame_rate()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels()..(t + 1) * self.n_mels()]
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.data[t * self.n_mels() + m]
    }

    pub fn energy(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.exp()).collect()
    }

    /// Channels-first `[n_mels, frames]` tensor, the layout convolutions consume.
    pub fn to_channels_first<T: Scalar>(&self) -> Tensor<T> {
        let (t, d) = (self.n_frames, self.n_mels());
        let mut out = Vec::with_capacity(t * d);
        for m in 0..d {
            out.extend((0..t).map(|f| T::c(self.data[f * d + m])));
        }
        Tensor::new(&[d, t], out).expect("sizes agree")
    }

    pub fn from_channels_first<T: Scalar>(config: MelConfig, x: &Tensor<T>) -> Result<Self> {
        let (d, t) = x.dims2()?;
        if d != config.n_mels {
            return Err(Error::Dimension(format!("{d} bands, config has {}", config.n_mels)));
        }
        let mut data = vec![0.0; t * d];
        for m in 0..d {
            for f in 0..t {
                data[f * d + m] = x.data()[m * t + f].as_f64();
            }
        }
        Self::from_log(config, t, data)
    }

    /// Frames `[start, start + len)`.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_frames {
            return Err(Error::Dimension(format!("crop {start}+{len} of {} frames", self.n_frames)));
        }
        let d = self.n_mels();
        Ok(Self { config: self.config.clone(), n_frames: len, data: self.data[start * d..(start + len) * d].to_vec() })
    }
}

/// Reusable analysis state (FFT plans and filterbank) for one config.
#[derive(Clone, Debug)]
pub struct MelAnalyzer {
    pub config: MelConfig,
    pub stft: Stft,
    pub fb: Vec<Vec<f64>>,
}

impl MelAnalyzer {
    pub fn new(config: MelConfig) -> Result<Self> {
        config.validate()?;
        let stft = Stft::new(config.n_fft, config.hop)?;
        let fb = filterbank(&config);
        Ok(Self { config, stft, fb })
    }

    /// Mel-band energies before the log, `frames × n_mels`.
    pub fn energies(&self, samples: &[f64]) -> Result<(usize, Vec<f64>)> {
        let spec = self.stft.forward(samples)?;
        let power = spec.power();
        let nb = spec.n_bins;
        let mut out = Vec::with_capacity(spec.n_frames * self.config.n_mels);
        for t in 0..spec.n_frames {
            let p = &power[t * nb..(t + 1) * nb];
            out.extend(self.fb.iter().map(|w| w.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()));
        }
        Ok((spec.n_frames, out))
    }

    pub fn analyze(&self, w: &Waveform) -> Result<MelSpectrogram> {
        if w.sample_rate != self.config.sample_rate {
            return Err(Error::Input(format!(
                "waveform at {} Hz, mel config expects {}",
                w.sample_rate, self.config.sample_rate
            )));
        }
        let (n, e) = self.energies(w.samples()?)?;
        let floor = self.config.log_floor;
        MelSpectrogram::from_log(self.config.clone(), n, e.into_iter().map(|v| v.max(floor).ln()).collect())
    }
}

pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelAnalyzer::new(cfg.clone())?.analyze(w)
}
