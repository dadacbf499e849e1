//! Fixed-shape decoder for deployment: latents are right-padded to a static
//! length, every stride-1 convolution runs as per-tap GEMMs, and frames past
//! the content are zeroed after each layer so padding never leaks inward.

use foley_core::infer::{crop, decompose_conv1d, pad_to_fixed_shape, BenchLayer, GemmPlan};
use foley_core::nn::{Conv1d, ParamStore};
use foley_core::{Error, Graph, Result, Scalar, Tensor};
use foley_dsp::MelSpectrogram;

use crate::vae::MelVae;

struct Planned<T> {
    plan: GemmPlan<T>,
}

pub struct PlannedDecoder<T> {
    fixed_latent: usize,
    input: Planned<T>,
    pre: Vec<Planned<T>>,
    up_w: Tensor<T>,
    up_b: Tensor<T>,
    up_stride: usize,
    up_pad: usize,
    post: Vec<Planned<T>>,
    out: Planned<T>,
    norm_shift: f64,
    norm_scale: f64,
    vae: MelVae,
}

fn plan_conv<T: Scalar>(ps: &ParamStore<T>, c: &Conv1d, fixed: usize) -> Result<Planned<T>> {
    Ok(Planned { plan: decompose_conv1d(ps.value(c.w), Some(ps.value(c.b)), c.stride, c.pad, fixed)? })
}

fn mask<T: Scalar>(x: &mut Tensor<T>, len: usize) -> Result<()> {
    let (c, t) = x.dims2()?;
    let d = x.data_mut();
    for r in 0..c {
        d[r * t + len..(r + 1) * t].fill(T::zero());
    }
    Ok(())
}

fn gelu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new().with_finite_checks(false);
    let v = g.constant(x.clone());
    let y = g.gelu(v)?;
    Ok(g.value(y).clone())
}

impl<T: Scalar> PlannedDecoder<T> {
    /// Plans the decoder of `vae` for latents of at most `fixed_latent` frames.
    pub fn new(vae: &MelVae, ps: &ParamStore<T>, fixed_latent: usize) -> Result<Self> {
        let l = vae.decoder_layers();
        let up_fixed = 2 * fixed_latent;
        Ok(Self {
            fixed_latent,
            input: plan_conv(ps, l.input, fixed_latent)?,
            pre: l.pre.iter().map(|c| plan_conv(ps, c, fixed_latent)).collect::<Result<_>>()?,
            up_w: ps.value(l.up.w).clone(),
            up_b: ps.value(l.up.b).clone(),
            up_stride: l.up.stride,
            up_pad: l.up.pad,
            post: l.post.iter().map(|c| plan_conv(ps, c, up_fixed)).collect::<Result<_>>()?,
            out: plan_conv(ps, l.out, up_fixed)?,
            norm_shift: vae.config.norm_shift,
            norm_scale: vae.config.norm_scale,
            vae: vae.clone(),
        })
    }

    pub fn fixed_latent(&self) -> usize {
        self.fixed_latent
    }

    /// The stride-1 convolutions as benchmark layers, in execution order.
    pub fn bench_layers(&self) -> Vec<(BenchLayer<T>, usize)> {
        let mut out = Vec::new();
        let mut push = |name: String, p: &Planned<T>| {
            let (c_out, c_in, k) = (p.plan.c_out, p.plan.c_in, p.plan.kernel_size());
            let mut kernel = vec![T::zero(); c_out * c_in * k];
            for (j, tap) in p.plan.taps.iter().enumerate() {
                for i in 0..c_out * c_in {
                    kernel[i * k + j] = tap.data()[i];
                }
            }
            let layer = BenchLayer {
                name,
                kernel: Tensor::new(&[c_out, c_in, k], kernel).expect("sizes agree"),
                bias: p.plan.bias.as_ref().map(|b| Tensor::new(&[c_out], b.clone()).expect("sizes agree")),
                stride: p.plan.stride,
                padding: p.plan.padding,
            };
            out.push((layer, p.plan.fixed_len));
        };
        push("dec.in".into(), &self.input);
        for (i, p) in self.pre.iter().enumerate() {
            push(format!("dec.pre{i}"), p);
        }
        for (i, p) in self.post.iter().enumerate() {
            push(format!("dec.post{i}"), p);
        }
        push("dec.out".into(), &self.out);
        out
    }

    fn conv(p: &Planned<T>, x: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
        let mut y = p.plan.apply(x)?;
        mask(&mut y, len)?;
        Ok(y)
    }

    fn residual(stack: &[Planned<T>], mut h: Tensor<T>, len: usize) -> Result<Tensor<T>> {
        for p in stack {
            let d = Self::conv(p, &gelu(&h)?, len)?;
            h.add_assign(&d)?;
        }
        Ok(h)
    }

    /// Decodes a channels-first latent `[d_latent, n]`, `n ≤ fixed_latent`, to `[n_mels, 2n]`.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let (zp, n) = pad_to_fixed_shape(z, self.fixed_latent)?;
        let h = Self::conv(&self.input, &zp, n)?;
        let h = Self::residual(&self.pre, h, n)?;
        let mut g = Graph::new().with_finite_checks(false);
        let hv = g.constant(gelu(&h)?);
        let wv = g.constant(self.up_w.clone());
        let bv = g.constant(self.up_b.clone());
        let u = g.conv1d_transposed(hv, wv, self.up_stride, self.up_pad)?;
        let u = g.add_bcast(u, bv, 0)?;
        let mut h = g.value(u).clone();
        if h.dim(1) != 2 * self.fixed_latent {
            return Err(Error::Internal(format!("upsampled length {} != {}", h.dim(1), 2 * self.fixed_latent)));
        }
        mask(&mut h, 2 * n)?;
        let h = Self::residual(&self.post, h, 2 * n)?;
        let y = Self::conv(&self.out, &gelu(&h)?, 2 * n)?;
        let (s, b) = (T::c(self.norm_scale), T::c(self.norm_shift));
        crop(&y.map(|v| v * s + b), 2 * n)
    }

    /// Decodes a time-major latent `[n, d_latent]` into a spectrogram.
    pub fn decode_latent(&self, z: &Tensor<T>) -> Result<MelSpectrogram> {
        let y = self.decode(&z.transpose2()?)?;
        MelSpectrogram::from_channels_first(self.vae.config.mel.clone(), &y)
    }
}
