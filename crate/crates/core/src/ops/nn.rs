use crate::error::{dim_err, input_err, Result};
use crate::graph::{Graph, Var};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn last_dim<T: Scalar>(t: &Tensor<T>) -> Result<usize> {
    t.shape().last().copied().ok_or_else(|| dim_err!("operation needs rank >= 1"))
}

fn softmax_row<T: Scalar>(row: &[T], out: &mut Vec<T>) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut z = T::zero();
    for &v in row {
        let e = (v - m).exp();
        z += e;
        out.push(e);
    }
    let inv = T::one() / z;
    out[start..].iter_mut().for_each(|e| *e *= inv);
}

impl<T: Scalar> Graph<T> {
    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let n = last_dim(xt)?;
        if n == 0 {
            return Err(dim_err!("softmax over an empty axis"));
        }
        let mut out = Vec::with_capacity(xt.numel());
        for row in xt.data().chunks(n) {
            softmax_row(row, &mut out);
        }
        let v = Tensor::new(xt.shape(), out)?;
        self.push(v, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let n = last_dim(xt)?;
        if n == 0 {
            return Err(dim_err!("log_softmax over an empty axis"));
        }
        let mut out = Vec::with_capacity(xt.numel());
        for row in xt.data().chunks(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let v = Tensor::new(xt.shape(), out)?;
        self.push(v, Op::LogSoftmax(x))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xt = self.value(x);
        let n = last_dim(xt)?;
        if n == 0 {
            return Err(dim_err!("layer_norm over an empty axis"));
        }
        let nf = T::c(n as f64);
        let mut out = Vec::with_capacity(xt.numel());
        let mut inv_std = Vec::with_capacity(xt.numel() / n);
        for row in xt.data().chunks(n) {
            let mu = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nf;
            let is = T::one() / (var + T::c(eps)).sqrt();
            inv_std.push(is);
            out.extend(row.iter().map(|&v| (v - mu) * is));
        }
        let v = Tensor::new(xt.shape(), out)?;
        self.push(v, Op::LayerNorm { x, inv_std })
    }

    /// `softmax(q·kᵀ/√d_h)·v` per head on `[h, T, d_h]` tensors.
    ///
    /// `key_mask[j] == false` excludes key `j` from every query.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let (h, tq, d) = self.value(q).dims3()?;
        let (hk, tk, dk) = self.value(k).dims3()?;
        let (hv, tv, dv) = self.value(v).dims3()?;
        if d == 0 {
            return Err(dim_err!("attention head dim is zero"));
        }
        if h != hk || h != hv || d != dk || tk != tv {
            return Err(dim_err!(
                "attention shapes q[{h},{tq},{d}] k[{hk},{tk},{dk}] v[{hv},{tv},{dv}]"
            ));
        }
        if tk == 0 {
            return Err(dim_err!("attention over zero keys"));
        }
        if let Some(mask) = key_mask {
            if mask.len() != tk || !mask.iter().any(|&m| m) {
                return Err(input_err!("key mask must have {tk} entries with at least one kept"));
            }
        }
        let scale = T::one() / T::c(d as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); h * tq * tk];
        let mut out = vec![T::zero(); h * tq * dv];
        let mut scores = vec![T::zero(); tq * tk];
        let mut row = Vec::with_capacity(tk);
        for head in 0..h {
            let qh = &qd[head * tq * d..(head + 1) * tq * d];
            let kh = &kd[head * tk * d..(head + 1) * tk * d];
            let vh = &vd[head * tk * dv..(head + 1) * tk * dv];
            T::gemm(tq, d, tk, qh, false, kh, true, &mut scores, false);
            let ph = &mut probs[head * tq * tk..(head + 1) * tq * tk];
            for i in 0..tq {
                let srow = &mut scores[i * tk..(i + 1) * tk];
                for (j, s) in srow.iter_mut().enumerate() {
                    *s = match key_mask {
                        Some(m) if !m[j] => T::neg_infinity(),
                        _ => *s * scale,
                    };
                }
                row.clear();
                softmax_row(srow, &mut row);
                ph[i * tk..(i + 1) * tk].copy_from_slice(&row);
            }
            T::gemm(tq, tk, dv, ph, false, vh, false, &mut out[head * tq * dv..(head + 1) * tq * dv], false);
        }
        let probs = Tensor::new(&[h, tq, tk], probs)?;
        self.push(Tensor::new(&[h, tq, dv], out)?, Op::Attention { q, k, v, probs, scale })
    }

    /// Rotates feature pairs `(i, i + d/2)` of `x[h, T, d]` by `angles[T, d/2]`.
    pub fn rope(&mut self, x: Var, angles: &Tensor<f64>) -> Result<Var> {
        let (h, t, d) = self.value(x).dims3()?;
        if d % 2 != 0 {
            return Err(dim_err!("rope needs an even head dim, got {d}"));
        }
        let half = d / 2;
        if angles.shape() != [t, half] {
            return Err(dim_err!("rope angles {:?} for x[{h},{t},{d}]", angles.shape()));
        }
        let cos: Vec<T> = angles.data().iter().map(|a| T::c(a.cos())).collect();
        let sin: Vec<T> = angles.data().iter().map(|a| T::c(a.sin())).collect();
        let out = rotate(self.value(x).data(), h, t, half, &cos, &sin, false);
        self.push(Tensor::new(&[h, t, d], out)?, Op::Rope { x, cos, sin })
    }
}

fn rotate<T: Scalar>(
    x: &[T],
    h: usize,
    t: usize,
    half: usize,
    cos: &[T],
    sin: &[T],
    inverse: bool,
) -> Vec<T> {
    let d = 2 * half;
    let mut out = vec![T::zero(); x.len()];
    for head in 0..h {
        for p in 0..t {
            let base = (head * t + p) * d;
            for i in 0..half {
                let c = cos[p * half + i];
                let s = if inverse { -sin[p * half + i] } else { sin[p * half + i] };
                let a = x[base + i];
                let b = x[base + half + i];
                out[base + i] = a * c - b * s;
                out[base + half + i] = b * c + a * s;
            }
        }
    }
    out
}

pub(crate) fn rope_backward<T: Scalar>(cos: &[T], sin: &[T], gout: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, t, d) = gout.dims3()?;
    Tensor::new(gout.shape(), rotate(gout.data(), h, t, d / 2, cos, sin, true))
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().expect("rank >= 1");
    let mut out = Vec::with_capacity(y.numel());
    for (yr, gr) in y.data().chunks(n).zip(gout.data().chunks(n)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(y.shape(), out).expect("shape preserved")
}

pub(crate) fn log_softmax_backward<T: Scalar>(y: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().expect("rank >= 1");
    let mut out = Vec::with_capacity(y.numel());
    for (yr, gr) in y.data().chunks(n).zip(gout.data().chunks(n)) {
        let gs: T = gr.iter().copied().sum();
        out.extend(yr.iter().zip(gr).map(|(&l, &g)| g - l.exp() * gs));
    }
    Tensor::new(y.shape(), out).expect("shape preserved")
}

pub(crate) fn layer_norm_backward<T: Scalar>(y: &Tensor<T>, inv_std: &[T], gout: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().expect("rank >= 1");
    let nf = T::c(n as f64);
    let mut out = Vec::with_capacity(y.numel());
    for ((yr, gr), &is) in y.data().chunks(n).zip(gout.data().chunks(n)).zip(inv_std) {
        let gm = gr.iter().copied().sum::<T>() / nf;
        let gym = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / nf;
        out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| is * (gv - gm - yv * gym)));
    }
    Tensor::new(y.shape(), out).expect("shape preserved")
}

pub(crate) fn attention_backward<T: Scalar>(
    g: &Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    probs: &Tensor<T>,
    scale: T,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let (h, tq, d) = g.value(q).dims3()?;
    let tk = g.value(k).dim(1);
    let dv = g.value(v).dim(2);
    let (qd, kd, vd) = (g.value(q).data(), g.value(k).data(), g.value(v).data());
    let mut dq = vec![T::zero(); h * tq * d];
    let mut dk = vec![T::zero(); h * tk * d];
    let mut dvv = vec![T::zero(); h * tk * dv];
    let mut dp = vec![T::zero(); tq * tk];
    for head in 0..h {
        let ph = &probs.data()[head * tq * tk..(head + 1) * tq * tk];
        let go = &gout.data()[head * tq * dv..(head + 1) * tq * dv];
        let vh = &vd[head * tk * dv..(head + 1) * tk * dv];
        let qh = &qd[head * tq * d..(head + 1) * tq * d];
        let kh = &kd[head * tk * d..(head + 1) * tk * d];
        T::gemm(tk, tq, dv, ph, true, go, false, &mut dvv[head * tk * dv..(head + 1) * tk * dv], false);
        T::gemm(tq, dv, tk, go, false, vh, true, &mut dp, false);
        for i in 0..tq {
            let pr = &ph[i * tk..(i + 1) * tk];
            let dr = &mut dp[i * tk..(i + 1) * tk];
            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for (dv_, &p) in dr.iter_mut().zip(pr) {
                *dv_ = p * (*dv_ - dot) * scale;
            }
        }
        T::gemm(tq, tk, d, &dp, false, kh, false, &mut dq[head * tq * d..(head + 1) * tq * d], false);
        T::gemm(tk, tq, d, &dp, true, qh, false, &mut dk[head * tk * d..(head + 1) * tk * d], false);
    }
    Ok(vec![
        (q, Tensor::new(&[h, tq, d], dq)?),
        (k, Tensor::new(&[h, tk, d], dk)?),
        (v, Tensor::new(&[h, tk, dv], dvv)?),
    ])
}
