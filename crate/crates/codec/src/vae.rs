//! Convolutional mel-spectrogram VAE with 2× temporal compression.
//!
//! The encoder maps `[n_mels, T]` (T even) to a diagonal Gaussian posterior
//! over `[d_latent, T/2]`; the decoder maps latents back to `[n_mels, T]`.
//! Parameter names start with `enc.` (encoder and posterior head) or `dec.`.

use foley_core::nn::{Conv1d, ConvTranspose1d, ParamStore};
use foley_core::{Error, Graph, Result, Scalar, SeededRng, Tensor, Var};
use foley_dsp::MelSpectrogram;

use crate::config::CodecConfig;

#[derive(Clone, Debug)]
pub struct MelVae {
    pub config: CodecConfig,
    enc_in: Conv1d,
    enc_pre: Vec<Conv1d>,
    enc_down: Conv1d,
    enc_post: Vec<Conv1d>,
    enc_out: Conv1d,
    dec_in: Conv1d,
    dec_pre: Vec<Conv1d>,
    dec_up: ConvTranspose1d,
    dec_post: Vec<Conv1d>,
    dec_out: Conv1d,
}

/// Posterior moments, time-major `[T/2, d_latent]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaePosterior<T> {
    pub mu: Tensor<T>,
    pub log_sigma: Tensor<T>,
    /// Mel frames of the encoded input before even-padding.
    pub n_frames: usize,
}

fn res_stack<T: Scalar>(ps: &mut ParamStore<T>, name: &str, n: usize, c: usize, rng: &mut SeededRng) -> Vec<Conv1d> {
    (0..n).map(|i| Conv1d::new(ps, &format!("{name}{i}"), c, c, 3, 1, 1, rng)).collect()
}

fn run_res<T: Scalar>(g: &mut Graph<T>, ps: &ParamStore<T>, layers: &[Conv1d], mut h: Var) -> Result<Var> {
    for l in layers {
        let a = g.gelu(h)?;
        let d = l.forward(g, ps, a)?;
        h = g.add(h, d)?;
    }
    Ok(h)
}

impl MelVae {
    pub fn new<T: Scalar>(config: CodecConfig, ps: &mut ParamStore<T>, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (m, c, d) = (config.mel.n_mels, config.channels, config.d_latent);
        let mid = config.n_enc_layers - 3;
        let (n_pre, n_post) = (mid.div_ceil(2), mid / 2);
        let enc_in = Conv1d::new(ps, "enc.in", m, c, 3, 1, 1, rng);
        let enc_pre = res_stack(ps, "enc.pre", n_pre, c, rng);
        let enc_down = Conv1d::new(ps, "enc.down", c, c, 4, 2, 1, rng);
        let enc_post = res_stack(ps, "enc.post", n_post, c, rng);
        let enc_out = Conv1d::new(ps, "enc.out", c, 2 * d, 3, 1, 1, rng);
        let dec_in = Conv1d::new(ps, "dec.in", d, c, 3, 1, 1, rng);
        let dec_pre = res_stack(ps, "dec.pre", n_post, c, rng);
        let dec_up = ConvTranspose1d::new(ps, "dec.up", c, c, 4, 2, 1, rng);
        let dec_post = res_stack(ps, "dec.post", n_pre, c, rng);
        let dec_out = Conv1d::new(ps, "dec.out", c, m, 3, 1, 1, rng);
        Ok(Self { config, enc_in, enc_pre, enc_down, enc_post, enc_out, dec_in, dec_pre, dec_up, dec_post, dec_out })
    }

    /// Posterior `(mu, log_sigma)`, each `[d_latent, T/2]`, for a log-mel `[n_mels, T]`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, mel: Var) -> Result<(Var, Var)> {
        let t = g.shape(mel)[1];
        if t % 2 != 0 || t == 0 {
            return Err(Error::Dimension(format!("encoder needs an even, non-zero frame count, got {t}")));
        }
        let x = g.add_scalar(mel, -self.config.norm_shift)?;
        let x = g.scale(x, 1.0 / self.config.norm_scale)?;
        let h = self.enc_in.forward(g, ps, x)?;
        let h = run_res(g, ps, &self.enc_pre, h)?;
        let a = g.gelu(h)?;
        let h = self.enc_down.forward(g, ps, a)?;
        let h = run_res(g, ps, &self.enc_post, h)?;
        let a = g.gelu(h)?;
        let out = self.enc_out.forward(g, ps, a)?;
        let d = self.config.d_latent;
        Ok((g.slice(out, 0, 0, d)?, g.slice(out, 0, d, d)?))
    }

    /// Log-mel `[n_mels, 2n]` for a latent `[d_latent, n]`.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, z: Var) -> Result<Var> {
        let h = self.dec_in.forward(g, ps, z)?;
        let h = run_res(g, ps, &self.dec_pre, h)?;
        let a = g.gelu(h)?;
        let h = self.dec_up.forward(g, ps, a)?;
        let h = run_res(g, ps, &self.dec_post, h)?;
        let a = g.gelu(h)?;
        let y = self.dec_out.forward(g, ps, a)?;
        let y = g.scale(y, self.config.norm_scale)?;
        g.add_scalar(y, self.config.norm_shift)
    }

    /// `z = mu + exp(log_sigma) ⊙ noise`.
    pub fn reparameterize<T: Scalar>(g: &mut Graph<T>, mu: Var, log_sigma: Var, noise: Var) -> Result<Var> {
        let s = g.exp(log_sigma)?;
        let e = g.mul(s, noise)?;
        g.add(mu, e)
    }

    /// Channels-first tensor of `mel`, padded to an even frame count by repeating the last frame.
    pub fn even_input<T: Scalar>(&self, mel: &MelSpectrogram) -> Result<Tensor<T>> {
        self.check_mel(mel)?;
        let x: Tensor<T> = mel.to_channels_first();
        if mel.n_frames % 2 == 0 {
            return Ok(x);
        }
        let (d, t) = x.dims2()?;
        let mut out = Vec::with_capacity(d * (t + 1));
        for r in 0..d {
            out.extend_from_slice(x.row(r));
            out.push(x.row(r)[t - 1]);
        }
        Tensor::new(&[d, t + 1], out)
    }

    fn check_mel(&self, mel: &MelSpectrogram) -> Result<()> {
        if mel.config != self.config.mel {
            return Err(Error::Input("spectrogram mel config differs from the codec's".into()));
        }
        if mel.n_frames < 2 {
            return Err(Error::Input(format!("{} mel frames are too few to encode", mel.n_frames)));
        }
        Ok(())
    }

    pub fn encode_mel<T: Scalar>(&self, ps: &ParamStore<T>, mel: &MelSpectrogram) -> Result<VaePosterior<T>> {
        let x = self.even_input(mel)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let (mu, ls) = self.encode(&mut g, ps, xv)?;
        Ok(VaePosterior {
            mu: g.value(mu).transpose2()?,
            log_sigma: g.value(ls).transpose2()?,
            n_frames: mel.n_frames,
        })
    }

    /// Decodes a time-major latent `[n, d_latent]` into `2n` mel frames.
    pub fn decode_latent<T: Scalar>(&self, ps: &ParamStore<T>, z: &Tensor<T>) -> Result<MelSpectrogram> {
        let (_, d) = z.dims2()?;
        if d != self.config.d_latent {
            return Err(Error::Dimension(format!("latent width {d}, codec has {}", self.config.d_latent)));
        }
        let mut g = Graph::new();
        let zv = g.constant(z.transpose2()?);
        let y = self.decode(&mut g, ps, zv)?;
        MelSpectrogram::from_channels_first(self.config.mel.clone(), g.value(y))
    }

    /// Decodes the posterior mean and crops back to the input length.
    pub fn reconstruct<T: Scalar>(&self, ps: &ParamStore<T>, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        let post = self.encode_mel(ps, mel)?;
        self.decode_latent(ps, &post.mu)?.crop(0, mel.n_frames)
    }

    pub(crate) fn decoder_layers(&self) -> DecoderLayers<'_> {
        DecoderLayers {
            input: &self.dec_in,
            pre: &self.dec_pre,
            up: &self.dec_up,
            post: &self.dec_post,
            out: &self.dec_out,
        }
    }
}

pub(crate) struct DecoderLayers<'a> {
    pub input: &'a Conv1d,
    pub pre: &'a [Conv1d],
    pub up: &'a ConvTranspose1d,
    pub post: &'a [Conv1d],
    pub out: &'a Conv1d,
}

impl<T: Scalar> VaePosterior<T> {
    /// A sample `mu + sigma·ε` with `ε` drawn from `rng`.
    pub fn sample(&self, rng: &mut SeededRng) -> Tensor<T> {
        let data = self
            .mu
            .data()
            .iter()
            .zip(self.log_sigma.data())
            .map(|(&m, &s)| m + s.exp() * T::c(rng.normal()))
            .collect();
        Tensor::new(self.mu.shape(), data).expect("shapes agree")
    }
}
