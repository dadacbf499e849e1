//! Fixed-shape inference: right padding to a static length and rewriting a
//! 1-D convolution as `k` shifted matrix products, one per kernel tap.
//!
//! `y[:, t] = b + Σ_j W_j · x[:, t·stride + j − padding]`, `W_j = kernel[:, :, j]`.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::conv::conv_out_len;
use crate::error::{dim_err, input_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Zero-pads `x[C, T]` on the right to `fixed_len`; returns the padded tensor and `T`.
pub fn pad_to_fixed_shape<T: Scalar>(x: &Tensor<T>, fixed_len: usize) -> Result<(Tensor<T>, usize)> {
    let (c, len) = x.dims2()?;
    if len > fixed_len {
        return Err(input_err!("content length {len} exceeds fixed length {fixed_len}"));
    }
    let mut out = vec![T::zero(); c * fixed_len];
    for ch in 0..c {
        out[ch * fixed_len..ch * fixed_len + len].copy_from_slice(x.row(ch));
    }
    Ok((Tensor::new(&[c, fixed_len], out)?, len))
}

/// Keeps the first `len` columns of `x[C, T]`.
pub fn crop<T: Scalar>(x: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    let (c, t) = x.dims2()?;
    if len > t {
        return Err(dim_err!("cannot crop {t} columns to {len}"));
    }
    let mut out = Vec::with_capacity(c * len);
    for ch in 0..c {
        out.extend_from_slice(&x.row(ch)[..len]);
    }
    Tensor::new(&[c, len], out)
}

/// A convolution decomposed into per-tap weight matrices for a fixed input length.
#[derive(Clone, Debug)]
pub struct GemmPlan<T> {
    pub taps: Vec<Tensor<T>>,
    pub bias: Option<Vec<T>>,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub padding: usize,
    pub fixed_len: usize,
    pub out_len: usize,
}

pub fn decompose_conv1d<T: Scalar>(
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    fixed_len: usize,
) -> Result<GemmPlan<T>> {
    let (c_out, c_in, k) = kernel.dims3()?;
    let out_len = conv_out_len(fixed_len, k, stride, padding)?;
    let taps = (0..k)
        .map(|j| {
            let data = (0..c_out * c_in).map(|i| kernel.data()[i * k + j]).collect();
            Tensor::new(&[c_out, c_in], data)
        })
        .collect::<Result<Vec<_>>>()?;
    let bias = match bias {
        Some(b) if b.shape() != [c_out] => return Err(dim_err!("bias shape {:?} for {c_out} channels", b.shape())),
        Some(b) => Some(b.data().to_vec()),
        None => None,
    };
    Ok(GemmPlan { taps, bias, c_in, c_out, stride, padding, fixed_len, out_len })
}

impl<T: Scalar> GemmPlan<T> {
    pub fn kernel_size(&self) -> usize {
        self.taps.len()
    }

    /// Runs the plan on `x[C_in, fixed_len]`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, len) = x.dims2()?;
        if c != self.c_in || len != self.fixed_len {
            return Err(dim_err!(
                "plan expects [{}, {}], got [{c}, {len}]",
                self.c_in,
                self.fixed_len
            ));
        }
        let n = self.out_len;
        let mut y = vec![T::zero(); self.c_out * n];
        if let Some(b) = &self.bias {
            for (row, &bv) in y.chunks_mut(n).zip(b) {
                row.fill(bv);
            }
        }
        let mut shifted = vec![T::zero(); c * n];
        for (j, w) in self.taps.iter().enumerate() {
            for ch in 0..c {
                let src = x.row(ch);
                let dst = &mut shifted[ch * n..(ch + 1) * n];
                for (t, d) in dst.iter_mut().enumerate() {
                    let pos = (t * self.stride + j) as isize - self.padding as isize;
                    *d = if pos >= 0 && (pos as usize) < len { src[pos as usize] } else { T::zero() };
                }
            }
            T::gemm(self.c_out, c, n, w.data(), false, &shifted, false, &mut y, true);
        }
        Tensor::new(&[self.c_out, n], y)
    }
}

/// Direct nested-loop convolution; the reference path for the bench.
pub fn conv1d_direct<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (c_in, len) = x.dims2()?;
    let (c_out, kc, k) = kernel.dims3()?;
    if kc != c_in {
        return Err(dim_err!("kernel expects {kc} input channels, got {c_in}"));
    }
    let n = conv_out_len(len, k, stride, padding)?;
    let (xd, wd) = (x.data(), kernel.data());
    let mut y = vec![T::zero(); c_out * n];
    for o in 0..c_out {
        let b = bias.map_or(T::zero(), |b| b.data()[o]);
        for t in 0..n {
            let mut acc = b;
            for ci in 0..c_in {
                for j in 0..k {
                    let pos = (t * stride + j) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += wd[(o * c_in + ci) * k + j] * xd[ci * len + pos as usize];
                    }
                }
            }
            y[o * n + t] = acc;
        }
    }
    Tensor::new(&[c_out, n], y)
}

/// One convolution layer to benchmark.
#[derive(Clone, Debug)]
pub struct BenchLayer<T> {
    pub name: String,
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub layer: String,
    pub k: usize,
    pub stride: usize,
    pub t: usize,
    pub naive_ms: f64,
    pub gemm_ms: f64,
    pub max_abs_diff: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times the direct and planned paths on the same padded input (medians over
/// `trials`) and records their largest output deviation.
pub fn bench_compare<T: Scalar>(
    layers: &[BenchLayer<T>],
    inputs: &[Tensor<T>],
    fixed_len: usize,
    trials: usize,
) -> Result<Vec<BenchRow>> {
    if trials == 0 {
        return Err(input_err!("trials must be >= 1"));
    }
    if layers.len() != inputs.len() {
        return Err(input_err!("one input per layer required"));
    }
    let mut rows = Vec::with_capacity(layers.len());
    for (layer, x) in layers.iter().zip(inputs) {
        let (xp, _) = pad_to_fixed_shape(x, fixed_len)?;
        let plan = decompose_conv1d(&layer.kernel, layer.bias.as_ref(), layer.stride, layer.padding, fixed_len)?;
        let (mut tn, mut tg) = (Vec::with_capacity(trials), Vec::with_capacity(trials));
        let mut dev = 0.0f64;
        for _ in 0..trials {
            let s = Instant::now();
            let a = conv1d_direct(&xp, &layer.kernel, layer.bias.as_ref(), layer.stride, layer.padding)?;
            tn.push(s.elapsed().as_secs_f64() * 1e3);
            let s = Instant::now();
            let b = plan.apply(&xp)?;
            tg.push(s.elapsed().as_secs_f64() * 1e3);
            dev = dev.max(a.max_abs_diff(&b)?);
        }
        rows.push(BenchRow {
            layer: layer.name.clone(),
            k: plan.kernel_size(),
            stride: layer.stride,
            t: fixed_len,
            naive_ms: median(tn),
            gemm_ms: median(tg),
            max_abs_diff: dev,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut w: W) -> Result<()> {
    writeln!(w, "layer,k,stride,T,naive_ms,gemm_ms,max_abs_diff")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{:e}",
            r.layer, r.k, r.stride, r.t, r.naive_ms, r.gemm_ms, r.max_abs_diff
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn exact_length_is_unchanged() {
        let x = Tensor::<f32>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let (p, n) = pad_to_fixed_shape(&x, 3).unwrap();
        assert_eq!((p, n), (x.clone(), 3));
        assert!(pad_to_fixed_shape(&x, 2).is_err());
        assert_eq!(crop(&pad_to_fixed_shape(&x, 7).unwrap().0, 3).unwrap(), x);
    }

    #[test]
    fn single_tap_plan_is_a_linear_layer() {
        let mut rng = SeededRng::new(1);
        let k = Tensor::<f64>::randn(&[3, 2, 1], &mut rng);
        let x = Tensor::<f64>::randn(&[2, 5], &mut rng);
        let plan = decompose_conv1d(&k, None, 1, 0, 5).unwrap();
        let w = k.clone().reshape(&[3, 2]).unwrap();
        let mut lin = vec![0.0; 15];
        f64::gemm(3, 2, 5, w.data(), false, x.data(), false, &mut lin, false);
        assert_eq!(plan.apply(&x).unwrap().data(), &lin[..]);
    }

    #[test]
    fn one_trial_report_is_well_formed() {
        let mut rng = SeededRng::new(2);
        let layer = BenchLayer {
            name: "l0".into(),
            kernel: Tensor::<f32>::randn(&[4, 4, 3], &mut rng),
            bias: None,
            stride: 1,
            padding: 1,
        };
        let x = Tensor::<f32>::randn(&[4, 10], &mut rng);
        let rows = bench_compare(&[layer], &[x], 16, 1).unwrap();
        let mut csv = Vec::new();
        write_bench_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(rows[0].naive_ms >= 0.0 && rows[0].max_abs_diff <= 1e-5);
    }
}
