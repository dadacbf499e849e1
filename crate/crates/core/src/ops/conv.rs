use crate::conv::{
    col2im1d, col2im2d, conv_out_len, conv_t_out_len, im2col1d, im2col2d, Geom2d,
};
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// `x[C_in, T] ⋆ w[C_out, C_in, k] → [C_out, T']`, `T' = ⌊(T + 2p − k)/s⌋ + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, len) = self.value(x).dims2()?;
        let (c_out, wc, k) = self.value(w).dims3()?;
        if wc != c_in {
            return Err(dim_err!("conv1d kernel expects {wc} input channels, got {c_in}"));
        }
        let out_len = conv_out_len(len, k, stride, pad)?;
        let cols = im2col1d(self.value(x).data(), c_in, len, k, stride, pad, out_len);
        let mut y = vec![T::zero(); c_out * out_len];
        T::gemm(c_out, c_in * k, out_len, self.value(w).data(), false, &cols, false, &mut y, false);
        let cols = Tensor::new(&[c_in * k, out_len], cols)?;
        self.push(Tensor::new(&[c_out, out_len], y)?, Op::Conv1d { x, w, stride, pad, cols })
    }

    /// Transposed convolution, `x[C_in, T]` with `w[C_in, C_out, k]`;
    /// output length `(T − 1)·s − 2p + k`.
    pub fn conv1d_transposed(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, len) = self.value(x).dims2()?;
        let (wc, c_out, k) = self.value(w).dims3()?;
        if wc != c_in {
            return Err(dim_err!("conv1d_transposed kernel expects {wc} input channels, got {c_in}"));
        }
        let out_len = conv_t_out_len(len, k, stride, pad)?;
        let mut cols = vec![T::zero(); c_out * k * len];
        T::gemm(c_out * k, c_in, len, self.value(w).data(), true, self.value(x).data(), false, &mut cols, false);
        let y = col2im1d(&cols, c_out, out_len, k, stride, pad, len);
        self.push(Tensor::new(&[c_out, out_len], y)?, Op::ConvT1d { x, w, stride, pad })
    }

    /// `x[C, H, W] ⋆ w[O, C, kh, kw] → [O, H', W']`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: (usize, usize), pad: (usize, usize)) -> Result<Var> {
        let (c, h, wd) = self.value(x).dims3()?;
        let ws = self.value(w).shape().to_vec();
        let [o, wc, kh, kw] = ws[..] else {
            return Err(dim_err!("conv2d kernel must be rank 4, got {:?}", ws));
        };
        if wc != c {
            return Err(dim_err!("conv2d kernel expects {wc} input channels, got {c}"));
        }
        let geom = Geom2d {
            channels: c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            out_h: conv_out_len(h, kh, stride.0, pad.0)?,
            out_w: conv_out_len(wd, kw, stride.1, pad.1)?,
        };
        let n_out = geom.out_h * geom.out_w;
        let cols = im2col2d(self.value(x).data(), &geom);
        let mut y = vec![T::zero(); o * n_out];
        T::gemm(o, c * kh * kw, n_out, self.value(w).data(), false, &cols, false, &mut y, false);
        let cols = Tensor::new(&[c * kh * kw, n_out], cols)?;
        let out = Tensor::new(&[o, geom.out_h, geom.out_w], y)?;
        self.push(out, Op::Conv2d { x, w, stride, pad, cols })
    }

    /// Per-channel convolution `x[C, T]` with `w[C, k]`, stride 1.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let (c, len) = self.value(x).dims2()?;
        let (wc, k) = self.value(w).dims2()?;
        if wc != c {
            return Err(dim_err!("depthwise kernel has {wc} channels, input {c}"));
        }
        let out_len = conv_out_len(len, k, 1, pad)?;
        let (xd, wdat) = (self.value(x).data(), self.value(w).data());
        let mut y = vec![T::zero(); c * out_len];
        for ch in 0..c {
            for t in 0..out_len {
                let mut acc = T::zero();
                for j in 0..k {
                    let pos = (t + j) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        acc += wdat[ch * k + j] * xd[ch * len + pos as usize];
                    }
                }
                y[ch * out_len + t] = acc;
            }
        }
        self.push(Tensor::new(&[c, out_len], y)?, Op::Depthwise1d { x, w, pad })
    }

    /// Averages adjacent pairs along the last axis (a trailing odd element is dropped).
    pub fn pool_pairs(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let n = *shape.last().ok_or_else(|| dim_err!("pool_pairs on a scalar"))?;
        if n < 2 {
            return Err(dim_err!("pool_pairs needs a last axis of at least 2"));
        }
        let half = n / 2;
        let mut out = Vec::with_capacity(self.value(x).numel() / n * half);
        for row in self.value(x).data().chunks(n) {
            for i in 0..half {
                out.push((row[2 * i] + row[2 * i + 1]) * T::c(0.5));
            }
        }
        let mut oshape = shape;
        *oshape.last_mut().expect("rank >= 1") = half;
        self.push(Tensor::new(&oshape, out)?, Op::PoolPairs(x))
    }
}

pub(crate) fn conv1d_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
    cols: &Tensor<T>,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let (c_in, len) = g.value(x).dims2()?;
    let (c_out, _, k) = g.value(w).dims3()?;
    let out_len = gout.dim(1);
    let mut res = Vec::with_capacity(2);
    if g.requires_grad(w) {
        let mut dw = vec![T::zero(); c_out * c_in * k];
        T::gemm(c_out, out_len, c_in * k, gout.data(), false, cols.data(), true, &mut dw, false);
        res.push((w, Tensor::new(&[c_out, c_in, k], dw)?));
    }
    if g.requires_grad(x) {
        let mut dcols = vec![T::zero(); c_in * k * out_len];
        T::gemm(c_in * k, c_out, out_len, g.value(w).data(), true, gout.data(), false, &mut dcols, false);
        let dx = col2im1d(&dcols, c_in, len, k, stride, pad, out_len);
        res.push((x, Tensor::new(&[c_in, len], dx)?));
    }
    Ok(res)
}

pub(crate) fn conv_t1d_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    w: Var,
    stride: usize,
    pad: usize,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let (c_in, len) = g.value(x).dims2()?;
    let (_, c_out, k) = g.value(w).dims3()?;
    let out_len = gout.dim(1);
    // the adjoint of the output scatter is an unfold of the upstream gradient
    let dcols = im2col1d(gout.data(), c_out, out_len, k, stride, pad, len);
    let mut res = Vec::with_capacity(2);
    if g.requires_grad(x) {
        let mut dx = vec![T::zero(); c_in * len];
        T::gemm(c_in, c_out * k, len, g.value(w).data(), false, &dcols, false, &mut dx, false);
        res.push((x, Tensor::new(&[c_in, len], dx)?));
    }
    if g.requires_grad(w) {
        let mut dw = vec![T::zero(); c_in * c_out * k];
        T::gemm(c_in, len, c_out * k, g.value(x).data(), false, &dcols, true, &mut dw, false);
        res.push((w, Tensor::new(&[c_in, c_out, k], dw)?));
    }
    Ok(res)
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    w: Var,
    stride: (usize, usize),
    pad: (usize, usize),
    cols: &Tensor<T>,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let (c, h, wd) = g.value(x).dims3()?;
    let ws = g.value(w).shape().to_vec();
    let (o, kh, kw) = (ws[0], ws[2], ws[3]);
    let (_, out_h, out_w) = gout.dims3()?;
    let n_out = out_h * out_w;
    let mut res = Vec::with_capacity(2);
    if g.requires_grad(w) {
        let mut dw = vec![T::zero(); o * c * kh * kw];
        T::gemm(o, n_out, c * kh * kw, gout.data(), false, cols.data(), true, &mut dw, false);
        res.push((w, Tensor::new(&ws, dw)?));
    }
    if g.requires_grad(x) {
        let mut dcols = vec![T::zero(); c * kh * kw * n_out];
        T::gemm(c * kh * kw, o, n_out, g.value(w).data(), true, gout.data(), false, &mut dcols, false);
        let geom = Geom2d { channels: c, h, w: wd, kh, kw, stride, pad, out_h, out_w };
        res.push((x, Tensor::new(&[c, h, wd], col2im2d(&dcols, &geom))?));
    }
    Ok(res)
}

pub(crate) fn depthwise_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    w: Var,
    pad: usize,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let (c, len) = g.value(x).dims2()?;
    let k = g.value(w).dim(1);
    let out_len = gout.dim(1);
    let (xd, wdat, gd) = (g.value(x).data(), g.value(w).data(), gout.data());
    let mut dx = vec![T::zero(); c * len];
    let mut dw = vec![T::zero(); c * k];
    for ch in 0..c {
        for t in 0..out_len {
            let gv = gd[ch * out_len + t];
            for j in 0..k {
                let pos = (t + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    let p = ch * len + pos as usize;
                    dx[p] += wdat[ch * k + j] * gv;
                    dw[ch * k + j] += xd[p] * gv;
                }
            }
        }
    }
    Ok(vec![(x, Tensor::new(&[c, len], dx)?), (w, Tensor::new(&[c, k], dw)?)])
}

pub(crate) fn pool_pairs_backward<T: Scalar>(in_shape: &[usize], gout: &Tensor<T>) -> Tensor<T> {
    let n = *in_shape.last().expect("rank >= 1");
    let half = n / 2;
    let mut out = Tensor::zeros(in_shape);
    for (orow, grow) in out.data_mut().chunks_mut(n).zip(gout.data().chunks(half)) {
        for i in 0..half {
            orow[2 * i] = grow[i] * T::c(0.5);
            orow[2 * i + 1] = grow[i] * T::c(0.5);
        }
    }
    out
}
