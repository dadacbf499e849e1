//! Unfold/fold kernels behind the convolution ops.
//!
//! All convolutions use the cross-correlation convention:
//! `y[o, t] = Σ_c Σ_j w[o, c, j] · x[c, t·stride + j − padding]`.

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Output length of a 1-D convolution, or a dimension error if it is < 1.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(dim_err!("kernel size and stride must be >= 1 (k={k}, stride={stride})"));
    }
    let padded = len + 2 * pad;
    if padded < k {
        return Err(dim_err!("padded length {padded} shorter than kernel {k}"));
    }
    Ok((padded - k) / stride + 1)
}

/// Output length of a transposed 1-D convolution.
pub fn conv_t_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 || len == 0 {
        return Err(dim_err!("transposed conv needs k, stride, length >= 1"));
    }
    let full = (len - 1) * stride + k;
    if full <= 2 * pad {
        return Err(dim_err!("transposed conv output length < 1"));
    }
    Ok(full - 2 * pad)
}

/// `cols[(c·k + j), t] = x[c, t·stride + j − pad]` (zero outside).
pub fn im2col1d<T: Scalar>(
    x: &[T],
    channels: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); channels * k * out_len];
    for c in 0..channels {
        let xr = &x[c * len..(c + 1) * len];
        for j in 0..k {
            let row = &mut cols[(c * k + j) * out_len..(c * k + j + 1) * out_len];
            for (t, dst) in row.iter_mut().enumerate() {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    *dst = xr[pos as usize];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col1d`]: scatters columns back onto a `[channels, len]` signal.
pub fn col2im1d<T: Scalar>(
    cols: &[T],
    channels: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
) -> Vec<T> {
    let mut x = vec![T::zero(); channels * len];
    for c in 0..channels {
        for j in 0..k {
            let row = &cols[(c * k + j) * out_len..(c * k + j + 1) * out_len];
            for (t, &v) in row.iter().enumerate() {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    x[c * len + pos as usize] += v;
                }
            }
        }
    }
    x
}

#[derive(Clone, Copy, Debug)]
pub struct Geom2d {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

pub fn im2col2d<T: Scalar>(x: &[T], g: &Geom2d) -> Vec<T> {
    let n_out = g.out_h * g.out_w;
    let mut cols = vec![T::zero(); g.channels * g.kh * g.kw * n_out];
    for c in 0..g.channels {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let row = &mut cols[r * n_out..(r + 1) * n_out];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride.0 + i) as isize - g.pad.0 as isize;
                    if y < 0 || y as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let xx = (ox * g.stride.1 + j) as isize - g.pad.1 as isize;
                        if xx >= 0 && (xx as usize) < g.w {
                            row[oy * g.out_w + ox] = x[(c * g.h + y as usize) * g.w + xx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub fn col2im2d<T: Scalar>(cols: &[T], g: &Geom2d) -> Vec<T> {
    let n_out = g.out_h * g.out_w;
    let mut x = vec![T::zero(); g.channels * g.h * g.w];
    for c in 0..g.channels {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let row = &cols[r * n_out..(r + 1) * n_out];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride.0 + i) as isize - g.pad.0 as isize;
                    if y < 0 || y as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let xx = (ox * g.stride.1 + j) as isize - g.pad.1 as isize;
                        if xx >= 0 && (xx as usize) < g.w {
                            x[(c * g.h + y as usize) * g.w + xx as usize] += row[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_formulas() {
        assert_eq!(conv_out_len(4, 2, 2, 0).unwrap(), 2);
        assert_eq!(conv_out_len(3, 2, 1, 0).unwrap(), 2);
        assert!(conv_out_len(1, 3, 1, 0).is_err());
        assert_eq!(conv_t_out_len(2, 2, 2, 0).unwrap(), 4);
        assert_eq!(conv_t_out_len(43, 4, 2, 1).unwrap(), 86);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let (ch, len, k, s, p) = (2, 7, 3, 2, 1);
        let out = conv_out_len(len, k, s, p).unwrap();
        let x: Vec<f64> = (0..ch * len).map(|i| (i as f64 * 0.7).sin()).collect();
        let c: Vec<f64> = (0..ch * k * out).map(|i| (i as f64 * 1.3).cos()).collect();
        let a: f64 = im2col1d(&x, ch, len, k, s, p, out).iter().zip(&c).map(|(u, v)| u * v).sum();
        let b: f64 = x.iter().zip(col2im1d(&c, ch, len, k, s, p, out)).map(|(u, v)| u * v).sum();
        assert!((a - b).abs() < 1e-12);
    }
}
