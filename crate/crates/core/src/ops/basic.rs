use crate::error::{dim_err, input_err, Result};
use crate::graph::{Graph, Var};
use crate::ops::{split_axis, BcastKind, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary<T> {
    Neg,
    Exp,
    Log,
    Sqrt,
    Square,
    Abs,
    Relu,
    LeakyRelu(T),
    /// tanh approximation
    Gelu,
    Silu,
    Sigmoid,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn unary_forward<T: Scalar>(x: T, u: Unary<T>) -> T {
    match u {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sqrt => x.sqrt(),
        Unary::Square => x * x,
        Unary::Abs => x.abs(),
        Unary::Relu => x.max(T::zero()),
        Unary::LeakyRelu(s) => {
            if x > T::zero() {
                x
            } else {
                x * s
            }
        }
        Unary::Gelu => {
            let inner = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
            T::c(0.5) * x * (T::one() + inner.tanh())
        }
        Unary::Silu => x * sigmoid(x),
        Unary::Sigmoid => sigmoid(x),
        Unary::Tanh => x.tanh(),
    }
}

fn unary_derivative<T: Scalar>(x: T, y: T, u: Unary<T>) -> T {
    match u {
        Unary::Neg => -T::one(),
        Unary::Exp => y,
        Unary::Log => x.recip(),
        Unary::Sqrt => T::c(0.5) / y,
        Unary::Square => T::c(2.0) * x,
        Unary::Abs => x.signum(),
        Unary::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::LeakyRelu(s) => {
            if x > T::zero() {
                T::one()
            } else {
                s
            }
        }
        Unary::Gelu => {
            let x2 = x * x;
            let t = (T::c(GELU_C) * (x + T::c(GELU_A) * x2 * x)).tanh();
            T::c(0.5) * (T::one() + t)
                + T::c(0.5) * x * (T::one() - t * t) * T::c(GELU_C) * (T::one() + T::c(3.0 * GELU_A) * x2)
        }
        Unary::Silu => {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        }
        Unary::Sigmoid => y * (T::one() - y),
        Unary::Tanh => T::one() - y * y,
    }
}

pub(crate) fn unary_backward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    u: Unary<T>,
    gout: &Tensor<T>,
) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(gout.data())
        .map(|((&x, &y), &g)| g * unary_derivative(x, y, u))
        .collect();
    Tensor::new(x.shape(), data).expect("shape preserved")
}

impl<T: Scalar> Graph<T> {
    /// Matrix product `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(dim_err!("matmul inner dims {k} vs {k2}"));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let f = match kind {
            BinaryKind::Add => |x: T, y: T| x + y,
            BinaryKind::Sub => |x: T, y: T| x - y,
            BinaryKind::Mul => |x: T, y: T| x * y,
            BinaryKind::Div => |x: T, y: T| x / y,
        };
        let v = self.value(a).zip_map(self.value(b), f)?;
        self.push(v, Op::Binary(a, b, kind))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div)
    }

    fn bcast(&mut self, x: Var, b: Var, axis: usize, kind: BcastKind) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape();
        if axis >= xs.len() || bs != [xs[axis]] {
            return Err(dim_err!("cannot broadcast {:?} along axis {axis} of {:?}", bs, xs));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let bv = self.value(b).data();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(xv.len());
        for o in 0..outer {
            for (i, &bi) in bv.iter().enumerate().take(n) {
                let base = (o * n + i) * inner;
                for &xe in &xv[base..base + inner] {
                    out.push(match kind {
                        BcastKind::Add => xe + bi,
                        BcastKind::Mul => xe * bi,
                    });
                }
            }
        }
        self.push(Tensor::new(&xs, out)?, Op::Bcast { x, b, axis, kind })
    }

    /// Adds vector `b` to every slice along `axis` (`b.len() == shape[axis]`).
    pub fn add_bcast(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        self.bcast(x, b, axis, BcastKind::Add)
    }

    pub fn mul_bcast(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        self.bcast(x, b, axis, BcastKind::Mul)
    }

    /// Row-vector broadcast over the last axis.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let axis = self.value(x).rank().saturating_sub(1);
        self.add_bcast(x, b, axis)
    }

    pub fn mul_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let axis = self.value(x).rank().saturating_sub(1);
        self.mul_bcast(x, b, axis)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::c(s);
        let v = self.value(x).map(|e| e * s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::c(s);
        let v = self.value(x).map(|e| e + s);
        self.push(v, Op::AddScalar(x))
    }

    pub fn unary(&mut self, x: Var, u: Unary<T>) -> Result<Var> {
        let v = self.value(x).map(|e| unary_forward(e, u));
        self.push(v, Op::Unary(x, u))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Neg)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sqrt)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Square)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, Unary::LeakyRelu(T::c(slope)))
    }
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Gelu)
    }
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Silu)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let xt = self.value(x);
        let v = match axis {
            None => {
                let n = xt.numel();
                let s = xt.sum();
                let s = if mean {
                    if n == 0 {
                        return Err(dim_err!("mean of an empty tensor"));
                    }
                    s / T::c(n as f64)
                } else {
                    s
                };
                Tensor::scalar(s)
            }
            Some(axis) => {
                if axis >= xt.rank() {
                    return Err(dim_err!("reduce axis {axis} of {:?}", xt.shape()));
                }
                let (outer, n, inner) = split_axis(xt.shape(), axis);
                if mean && n == 0 {
                    return Err(dim_err!("mean over an empty axis"));
                }
                let mut out = vec![T::zero(); outer * inner];
                let d = xt.data();
                for o in 0..outer {
                    for i in 0..n {
                        let base = (o * n + i) * inner;
                        for j in 0..inner {
                            out[o * inner + j] += d[base + j];
                        }
                    }
                }
                if mean {
                    let inv = T::one() / T::c(n as f64);
                    out.iter_mut().for_each(|e| *e *= inv);
                }
                let mut shape = xt.shape().to_vec();
                shape.remove(axis);
                Tensor::new(&shape, out)?
            }
        };
        self.push(v, Op::Reduce { x, axis, mean })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, None, false)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, None, true)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, Some(axis), false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, Some(axis), true)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push(v, Op::Reshape(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose2()?;
        self.push(v, Op::Transpose(x))
    }

    /// `[a, b, c] → [b, a, c]`.
    pub fn swap_axes01(&mut self, x: Var) -> Result<Var> {
        let v = swap01(self.value(x))?;
        self.push(v, Op::SwapAxes01(x))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| input_err!("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(dim_err!("concat axis {axis} of {:?}", base));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.value(x).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err!("concat shapes {:?} vs {:?} on axis {axis}", s, base));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let n = t.dim(axis);
                out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(Tensor::new(&shape, out)?, Op::Concat { xs: xs.to_vec(), axis })
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        if axis >= xt.rank() || start + len > xt.dim(axis) {
            return Err(dim_err!("slice {start}..{} on axis {axis} of {:?}", start + len, xt.shape()));
        }
        let (outer, n, inner) = split_axis(xt.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&xt.data()[base..base + len * inner]);
        }
        let mut shape = xt.shape().to_vec();
        shape[axis] = len;
        self.push(Tensor::new(&shape, out)?, Op::Slice { x, axis, start })
    }

    /// Selects rows (entries along axis 0) by index; indices may repeat.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if xt.rank() == 0 {
            return Err(dim_err!("gather on a scalar"));
        }
        let rows = xt.dim(0);
        let inner: usize = xt.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            if i >= rows {
                return Err(input_err!("gather index {i} out of range 0..{rows}"));
            }
            out.extend_from_slice(&xt.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = xt.shape().to_vec();
        shape[0] = idx.len();
        self.push(Tensor::new(&shape, out)?, Op::Gather { x, idx: idx.to_vec() })
    }

    /// Mean squared difference over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let s = self.square(d)?;
        self.mean(s)
    }
}

pub(crate) fn swap01<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, b, c) = x.dims3()?;
    let d = x.data();
    let mut out = Vec::with_capacity(d.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&d[(i * b + j) * c..(i * b + j + 1) * c]);
        }
    }
    Tensor::new(&[b, a, c], out)
}

pub(crate) fn matmul_backward<T: Scalar>(
    g: &Graph<T>,
    a: Var,
    b: Var,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let (m, k) = g.value(a).dims2()?;
    let n = g.value(b).dim(1);
    let mut res = Vec::with_capacity(2);
    if g.requires_grad(a) {
        let mut da = vec![T::zero(); m * k];
        T::gemm(m, n, k, gout.data(), false, g.value(b).data(), true, &mut da, false);
        res.push((a, Tensor::new(&[m, k], da)?));
    }
    if g.requires_grad(b) {
        let mut db = vec![T::zero(); k * n];
        T::gemm(k, m, n, g.value(a).data(), true, gout.data(), false, &mut db, false);
        res.push((b, Tensor::new(&[k, n], db)?));
    }
    Ok(res)
}

pub(crate) fn binary_backward<T: Scalar>(
    g: &Graph<T>,
    a: Var,
    b: Var,
    kind: BinaryKind,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let av = g.value(a);
    let bv = g.value(b);
    Ok(match kind {
        BinaryKind::Add => vec![(a, gout.clone()), (b, gout.clone())],
        BinaryKind::Sub => vec![(a, gout.clone()), (b, gout.map(|v| -v))],
        BinaryKind::Mul => vec![(a, gout.zip_map(bv, |g, y| g * y)?), (b, gout.zip_map(av, |g, x| g * x)?)],
        BinaryKind::Div => {
            let da = gout.zip_map(bv, |g, y| g / y)?;
            let q = av.zip_map(bv, |x, y| x / (y * y))?;
            let db = gout.zip_map(&q, |g, q| -g * q)?;
            vec![(a, da), (b, db)]
        }
    })
}

pub(crate) fn bcast_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    b: Var,
    axis: usize,
    kind: BcastKind,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let xs = g.value(x).shape();
    let (outer, n, inner) = split_axis(xs, axis);
    let bv = g.value(b).data();
    let xv = g.value(x).data();
    let gd = gout.data();
    let mut dx = Vec::with_capacity(gd.len());
    let mut db = vec![T::zero(); n];
    for o in 0..outer {
        for i in 0..n {
            let base = (o * n + i) * inner;
            for j in base..base + inner {
                match kind {
                    BcastKind::Add => {
                        dx.push(gd[j]);
                        db[i] += gd[j];
                    }
                    BcastKind::Mul => {
                        dx.push(gd[j] * bv[i]);
                        db[i] += gd[j] * xv[j];
                    }
                }
            }
        }
    }
    Ok(vec![(x, Tensor::new(xs, dx)?), (b, Tensor::new(&[n], db)?)])
}

pub(crate) fn reduce_backward<T: Scalar>(
    in_shape: &[usize],
    axis: Option<usize>,
    mean: bool,
    gout: &Tensor<T>,
) -> Tensor<T> {
    match axis {
        None => {
            let n = in_shape.iter().product::<usize>();
            let mut v = gout.data()[0];
            if mean {
                v /= T::c(n as f64);
            }
            Tensor::full(in_shape, v)
        }
        Some(axis) => {
            let (outer, n, inner) = split_axis(in_shape, axis);
            let scale = if mean { T::one() / T::c(n as f64) } else { T::one() };
            let gd = gout.data();
            let mut out = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    out.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * scale));
                }
            }
            Tensor::new(in_shape, out).expect("shape preserved")
        }
    }
}

pub(crate) fn concat_backward<T: Scalar>(
    g: &Graph<T>,
    xs: &[Var],
    axis: usize,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let (outer, total, inner) = split_axis(gout.shape(), axis);
    let mut parts: Vec<Vec<T>> = xs.iter().map(|&x| Vec::with_capacity(g.value(x).numel())).collect();
    for o in 0..outer {
        let mut offset = 0;
        for (p, &x) in parts.iter_mut().zip(xs) {
            let n = g.value(x).dim(axis);
            let base = (o * total + offset) * inner;
            p.extend_from_slice(&gout.data()[base..base + n * inner]);
            offset += n;
        }
    }
    xs.iter()
        .zip(parts)
        .map(|(&x, p)| Ok((x, Tensor::new(g.shape(x), p)?)))
        .collect()
}

pub(crate) fn slice_backward<T: Scalar>(
    in_shape: &[usize],
    axis: usize,
    start: usize,
    gout: &Tensor<T>,
) -> Tensor<T> {
    let (outer, n, inner) = split_axis(in_shape, axis);
    let len = gout.dim(axis);
    let mut out = Tensor::zeros(in_shape);
    let od = out.data_mut();
    for o in 0..outer {
        let dst = (o * n + start) * inner;
        let src = o * len * inner;
        od[dst..dst + len * inner].copy_from_slice(&gout.data()[src..src + len * inner]);
    }
    out
}

pub(crate) fn gather_backward<T: Scalar>(in_shape: &[usize], idx: &[usize], gout: &Tensor<T>) -> Tensor<T> {
    let inner: usize = in_shape[1..].iter().product();
    let mut out = Tensor::zeros(in_shape);
    let od = out.data_mut();
    for (r, &i) in idx.iter().enumerate() {
        for j in 0..inner {
            od[i * inner + j] += gout.data()[r * inner + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[5., 6.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[17., 39.]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut g = Graph::new();
        let i3 = g.constant(Tensor::eye(3));
        let b = t(&[3, 2], &[1., -2., 3.5, 4., 0.25, 6.]);
        let bv = g.constant(b.clone());
        let c = g.matmul(i3, bv).unwrap();
        assert_eq!(g.value(c), &b);
        let z = g.constant(Tensor::zeros(&[4, 3]));
        let c = g.matmul(z, bv).unwrap();
        assert!(g.value(c).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn non_finite_forward_is_numeric_error() {
        let mut g = Graph::<f64>::new().with_finite_checks(true);
        let x = g.constant(t(&[1], &[-1.0]));
        assert!(matches!(g.log(x), Err(crate::Error::Numeric(_))));
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[1, 2], &[5., 6.]));
        let c = g.concat(&[a, b], 0).unwrap();
        let s = g.slice(c, 0, 2, 1).unwrap();
        assert_eq!(g.value(s).data(), &[5., 6.]);
        let c1 = g.concat(&[a, a], 1).unwrap();
        assert_eq!(g.value(c1).data(), &[1., 2., 1., 2., 3., 4., 3., 4.]);
    }

    #[test]
    fn gather_repeats_rows() {
        let mut g = Graph::new();
        let a = g.input(t(&[2, 2], &[1., 2., 3., 4.]));
        let r = g.gather(a, &[0, 0, 1, 1]).unwrap();
        assert_eq!(g.value(r).data(), &[1., 2., 1., 2., 3., 4., 3., 4.]);
        let s = g.sum(r).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[2., 2., 2., 2.]);
    }
}
