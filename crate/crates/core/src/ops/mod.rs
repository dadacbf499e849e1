//! Differentiable operations recorded on a [`Graph`](crate::Graph).

mod basic;
mod conv;
mod nn;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use basic::{BinaryKind, Unary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BcastKind {
    Add,
    Mul,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Binary(Var, Var, BinaryKind),
    Bcast { x: Var, b: Var, axis: usize, kind: BcastKind },
    Scale(Var, T),
    AddScalar(Var),
    Unary(Var, Unary<T>),
    Reduce { x: Var, axis: Option<usize>, mean: bool },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, inv_std: Vec<T> },
    Reshape(Var),
    Transpose(Var),
    SwapAxes01(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Gather { x: Var, idx: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, probs: Tensor<T>, scale: T },
    Rope { x: Var, cos: Vec<T>, sin: Vec<T> },
    Conv1d { x: Var, w: Var, stride: usize, pad: usize, cols: Tensor<T> },
    ConvT1d { x: Var, w: Var, stride: usize, pad: usize },
    Conv2d { x: Var, w: Var, stride: (usize, usize), pad: (usize, usize), cols: Tensor<T> },
    Depthwise1d { x: Var, w: Var, pad: usize },
    PoolPairs(Var),
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Binary(..) => "binary",
            Op::Bcast { .. } => "broadcast",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Unary(..) => "unary",
            Op::Reduce { .. } => "reduce",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::SwapAxes01(..) => "swap_axes01",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Attention { .. } => "attention",
            Op::Rope { .. } => "rope",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvT1d { .. } => "conv1d_transposed",
            Op::Conv2d { .. } => "conv2d",
            Op::Depthwise1d { .. } => "depthwise_conv1d",
            Op::PoolPairs(..) => "pool_pairs",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Binary(a, b, _) => vec![*a, *b],
            Op::Bcast { x, b, .. } => vec![*x, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Unary(x, _)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Reshape(x)
            | Op::Transpose(x)
            | Op::SwapAxes01(x)
            | Op::PoolPairs(x) => vec![*x],
            Op::Reduce { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::Slice { x, .. }
            | Op::Gather { x, .. }
            | Op::Rope { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Conv1d { x, w, .. }
            | Op::ConvT1d { x, w, .. }
            | Op::Conv2d { x, w, .. }
            | Op::Depthwise1d { x, w, .. } => vec![*x, *w],
        }
    }
}

/// `(outer, n, inner)` sizes around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Input-gradient contributions of node `out` given its upstream gradient.
pub(crate) fn backward<T: Scalar>(
    g: &Graph<T>,
    out: Var,
    gout: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let node = &g.nodes[out.0];
    let y = &node.value;
    match &node.op {
        Op::Leaf => Ok(vec![]),
        Op::MatMul(a, b) => basic::matmul_backward(g, *a, *b, gout),
        Op::Binary(a, b, kind) => basic::binary_backward(g, *a, *b, *kind, gout),
        Op::Bcast { x, b, axis, kind } => basic::bcast_backward(g, *x, *b, *axis, *kind, gout),
        Op::Scale(x, s) => Ok(vec![(*x, gout.map(|v| v * *s))]),
        Op::AddScalar(x) => Ok(vec![(*x, gout.clone())]),
        Op::Unary(x, u) => Ok(vec![(*x, basic::unary_backward(g.value(*x), y, *u, gout))]),
        Op::Reduce { x, axis, mean } => {
            Ok(vec![(*x, basic::reduce_backward(g.value(*x).shape(), *axis, *mean, gout))])
        }
        Op::Softmax(x) => Ok(vec![(*x, nn::softmax_backward(y, gout))]),
        Op::LogSoftmax(x) => Ok(vec![(*x, nn::log_softmax_backward(y, gout))]),
        Op::LayerNorm { x, inv_std } => Ok(vec![(*x, nn::layer_norm_backward(y, inv_std, gout))]),
        Op::Reshape(x) => Ok(vec![(*x, gout.clone().reshape(g.shape(*x))?)]),
        Op::Transpose(x) => Ok(vec![(*x, gout.transpose2()?)]),
        Op::SwapAxes01(x) => Ok(vec![(*x, basic::swap01(gout)?)]),
        Op::Concat { xs, axis } => basic::concat_backward(g, xs, *axis, gout),
        Op::Slice { x, axis, start } => {
            Ok(vec![(*x, basic::slice_backward(g.shape(*x), *axis, *start, gout))])
        }
        Op::Gather { x, idx } => Ok(vec![(*x, basic::gather_backward(g.shape(*x), idx, gout))]),
        Op::Attention { q, k, v, probs, scale } => {
            nn::attention_backward(g, *q, *k, *v, probs, *scale, gout)
        }
        Op::Rope { x, cos, sin } => Ok(vec![(*x, nn::rope_backward(cos, sin, gout)?)]),
        Op::Conv1d { x, w, stride, pad, cols } => {
            conv::conv1d_backward(g, *x, *w, *stride, *pad, cols, gout)
        }
        Op::ConvT1d { x, w, stride, pad } => conv::conv_t1d_backward(g, *x, *w, *stride, *pad, gout),
        Op::Conv2d { x, w, stride, pad, cols } => {
            conv::conv2d_backward(g, *x, *w, *stride, *pad, cols, gout)
        }
        Op::Depthwise1d { x, w, pad } => conv::depthwise_backward(g, *x, *w, *pad, gout),
        Op::PoolPairs(x) => Ok(vec![(*x, conv::pool_pairs_backward(g.shape(*x), gout))]),
    }
}
