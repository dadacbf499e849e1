//! Mono-to-stereo rendering from a predicted per-band log-ratio field.
//!
//! For a mono log-mel `m` and field `s`, the channels are
//! `left = m + ln(2σ(s))` and `right = m + ln(2σ(−s))`. The energies
//! `2σ(s)·eᵐ` and `2σ(−s)·eᵐ` always sum to `2eᵐ`, and `s = 0` reproduces the
//! mono input in both channels.

use std::f64::consts::LN_2;

use foley_core::nn::{Conv1d, ParamStore};
use foley_core::optim::{AdamW, AdamWConfig, GradStore};
use foley_core::{Error, Graph, Result, Scalar, SeededRng, Tensor, Var};
use foley_dsp::griffin_lim::griffin_lim;
use foley_dsp::{MelAnalyzer, MelSpectrogram, Waveform};

/// `ln(2σ(s))`, exactly zero at `s = 0`.
pub fn log_two_sigmoid(s: f64) -> f64 {
    if s > -30.0 {
        (2.0 / (1.0 + (-s).exp())).ln()
    } else {
        LN_2 + s
    }
}

/// Splits mono log values by the field `s` into `(left, right)` log values.
pub fn split_log(mono: &[f64], s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if mono.len() != s.len() {
        return Err(Error::Dimension(format!("{} mono values, {} ratio values", mono.len(), s.len())));
    }
    let left = mono.iter().zip(s).map(|(m, &v)| m + log_two_sigmoid(v)).collect();
    let right = mono.iter().zip(s).map(|(m, &v)| m + log_two_sigmoid(-v)).collect();
    Ok((left, right))
}

/// Log-ratio field predictor: two convolutions over the normalized mono mel,
/// the second zero-initialized so an untrained model renders mono.
#[derive(Clone, Debug)]
pub struct MonoToStereo {
    l1: Conv1d,
    l2: Conv1d,
    norm_shift: f64,
    norm_scale: f64,
}

/// Field a synthetic panner applies: low bands lean left, high bands right.
pub fn synthetic_pan(n_mels: usize, width: f64) -> Vec<f64> {
    (0..n_mels).map(|b| width * (1.0 - 2.0 * b as f64 / (n_mels.max(2) - 1) as f64)).collect()
}

impl MonoToStereo {
    /// Parameter names start with `stereo.`.
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        n_mels: usize,
        hidden: usize,
        norm_shift: f64,
        norm_scale: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let l1 = Conv1d::new(ps, "stereo.l1", n_mels, hidden, 3, 1, 1, rng);
        let l2 = Conv1d::new(ps, "stereo.l2", hidden, n_mels, 3, 1, 1, rng);
        for id in [l2.w, l2.b] {
            let shape = ps.value(id).shape().to_vec();
            ps.set(id, Tensor::zeros(&shape))?;
        }
        Ok(Self { l1, l2, norm_shift, norm_scale })
    }

    /// Field `s` `[n_mels, T]` for a mono log-mel `[n_mels, T]`.
    pub fn field<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, mono: Var) -> Result<Var> {
        let x = g.add_scalar(mono, -self.norm_shift)?;
        let x = g.scale(x, 1.0 / self.norm_scale)?;
        let h = self.l1.forward(g, ps, x)?;
        let h = g.gelu(h)?;
        self.l2.forward(g, ps, h)
    }

    /// Field as `frames × n_mels` values, aligned with [`MelSpectrogram::data`].
    pub fn predict<T: Scalar>(&self, ps: &ParamStore<T>, mono: &MelSpectrogram) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(mono.to_channels_first::<T>());
        let s = self.field(&mut g, ps, x)?;
        Ok(g.value(s).transpose2()?.to_f64_vec())
    }

    /// `(left, right)` log-mel spectrograms.
    pub fn mono_to_stereo<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        mono: &MelSpectrogram,
    ) -> Result<(MelSpectrogram, MelSpectrogram)> {
        let s = self.predict(ps, mono)?;
        let (l, r) = split_log(mono.data(), &s)?;
        Ok((
            MelSpectrogram::from_log(mono.config.clone(), mono.n_frames, l)?,
            MelSpectrogram::from_log(mono.config.clone(), mono.n_frames, r)?,
        ))
    }

    /// Fits the predictor to [`synthetic_pan`] on mono mels `[n_mels, T]`; returns the final loss.
    pub fn train_synthetic<T: Scalar>(
        &self,
        ps: &mut ParamStore<T>,
        mels: &[Tensor<T>],
        steps: u64,
        lr: f64,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        if mels.is_empty() {
            return Err(Error::Input("no spectrograms to train on".into()));
        }
        let mut opt = AdamW::new(ps, AdamWConfig::default());
        let mut last = f64::NAN;
        for _ in 0..steps {
            let x = &mels[rng.below(mels.len())];
            let (d, t) = x.dims2()?;
            let pan = synthetic_pan(d, 1.0);
            let target = Tensor::new(&[d, t], pan.iter().flat_map(|&p| std::iter::repeat_n(T::c(p), t)).collect())?;
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let s = self.field(&mut g, ps, xv)?;
            let tv = g.constant(target);
            let mut loss = None;
            for sign in [1.0, -1.0] {
                let a = g.scale(s, sign)?;
                let a = g.sigmoid(a)?;
                let a = g.log(a)?;
                let b = g.scale(tv, sign)?;
                let b = g.sigmoid(b)?;
                let b = g.log(b)?;
                let l = g.mse(a, b)?;
                loss = Some(match loss {
                    None => l,
                    Some(p) => g.add(p, l)?,
                });
            }
            let loss = loss.expect("two terms");
            last = g.value(loss).item()?.as_f64();
            let grads = g.backward(loss)?;
            let mut gs = GradStore::zeros_like(ps);
            gs.accumulate(&g, &grads, ps)?;
            gs.clip(1.0);
            opt.step(ps, &gs, lr)?;
        }
        Ok(last)
    }
}

/// Renders a mono and a stereo waveform from a mono log-mel and a field `s`
/// (`frames × n_mels`). Both channels reuse the mono reconstruction's phase;
/// per-bin power gains interpolate the per-band ratios through the filterbank.
pub fn render_stereo(an: &MelAnalyzer, mono: &MelSpectrogram, s: &[f64], iters: usize) -> Result<(Waveform, Waveform)> {
    if s.len() != mono.data().len() {
        return Err(Error::Dimension(format!("field has {} values, spectrogram {}", s.len(), mono.data().len())));
    }
    let wm = griffin_lim(an, mono, iters)?;
    let x = wm.samples()?;
    let spec = an.stft.forward(x)?;
    let nb = spec.n_bins;
    let nm = mono.n_mels();
    let cover: Vec<f64> = (0..nb).map(|k| an.fb.iter().map(|f| f[k]).sum()).collect();
    let mut left = spec.clone();
    let mut right = spec.clone();
    for t in 0..spec.n_frames.min(mono.n_frames) {
        let ratio: Vec<f64> = s[t * nm..(t + 1) * nm].iter().map(|&v| log_two_sigmoid(v).exp()).collect();
        for k in 0..nb {
            let gl = if cover[k] > 0.0 {
                an.fb.iter().zip(&ratio).map(|(f, r)| f[k] * r).sum::<f64>() / cover[k]
            } else {
                1.0
            };
            let gr = 2.0 - gl;
            left.data[t * nb + k] *= gl.sqrt();
            right.data[t * nb + k] *= gr.max(0.0).sqrt();
        }
    }
    let xl = an.stft.inverse(&left, x.len())?;
    let xr = an.stft.inverse(&right, x.len())?;
    let stereo = Waveform::clipped(an.config.sample_rate, vec![xl, xr])?;
    Ok((wm, stereo))
}
