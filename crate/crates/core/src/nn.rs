//! Parameter storage and the standard layers built on it.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    trainable: bool,
}

/// Named, ordered parameter tensors. Every store has a process-unique id so
/// graphs can cache loaded parameters; a clone gets a new id.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| Entry { name: e.name.clone(), value: e.value.clone(), trainable: e.trainable })
            .collect();
        Self { uid: fresh_uid(), entries }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { uid: fresh_uid(), entries: Vec::new() }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry { name, value, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform in ±1/√fan_in.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        self.entries[id.0].value.same_shape(&value)?;
        self.entries[id.0].value = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, on: bool) {
        self.entries[id.0].trainable = on;
    }

    /// Sets the trainable flag on every parameter whose name starts with `prefix`;
    /// returns how many matched.
    pub fn set_trainable_prefix(&mut self, prefix: &str, on: bool) -> usize {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.trainable = on;
            n += 1;
        }
        n
    }

    pub fn set_all_trainable(&mut self, on: bool) {
        for e in &mut self.entries {
            e.trainable = on;
        }
    }

    /// Same names and values at another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            uid: fresh_uid(),
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and values of parameters starting with `prefix`.
    pub fn fingerprint(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            h.update(e.name.as_bytes());
            for &d in e.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in e.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies values from a store with the same layout.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Contract("parameter stores differ in layout".into()));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name {
                return Err(Error::Contract(format!("parameter {} vs {}", a.name, b.name)));
            }
            a.value.same_shape(&b.value)?;
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// `y = x·W + b` on `x[n, in]`, with `W[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = ps.add_uniform(format!("{name}.w"), &[d_in, d_out], d_in, rng);
        let b = bias.then(|| ps.add_uniform(format!("{name}.b"), &[d_out], d_in, rng));
        Self { w, b, d_in, d_out }
    }

    /// Zero weight and bias; used for modulation heads that must start inert.
    pub fn zeros<T: Scalar>(ps: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = ps.add_zeros(format!("{name}.w"), &[d_in, d_out]);
        let b = Some(ps.add_zeros(format!("{name}.b"), &[d_out]));
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(ps, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// 1-D convolution over `[C_in, T]` with a per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * k;
        let w = ps.add_uniform(format!("{name}.w"), &[c_out, c_in, k], fan_in, rng);
        let b = ps.add_uniform(format!("{name}.b"), &[c_out], fan_in, rng);
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        let y = g.conv1d(x, w, self.stride, self.pad)?;
        g.add_bcast(y, b, 0)
    }
}

/// Transposed 1-D convolution, weight `[C_in, C_out, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        // each output sample sees about c_in·k/stride inputs
        let fan_in = (c_in * k / stride.max(1)).max(1);
        let w = ps.add_uniform(format!("{name}.w"), &[c_in, c_out, k], fan_in, rng);
        let b = ps.add_uniform(format!("{name}.b"), &[c_out], fan_in, rng);
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        let y = g.conv1d_transposed(x, w, self.stride, self.pad)?;
        g.add_bcast(y, b, 0)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * k.0 * k.1;
        let w = ps.add_uniform(format!("{name}.w"), &[c_out, c_in, k.0, k.1], fan_in, rng);
        let b = ps.add_uniform(format!("{name}.b"), &[c_out], fan_in, rng);
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        let y = g.conv2d(x, w, self.stride, self.pad)?;
        g.add_bcast(y, b, 0)
    }
}

/// Per-channel 1-D convolution with "same" padding for odd `k`.
#[derive(Clone, Debug)]
pub struct DepthwiseConv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
}

impl DepthwiseConv1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.add_uniform(format!("{name}.w"), &[channels, k], k, rng);
        let b = ps.add_uniform(format!("{name}.b"), &[channels], k, rng);
        Self { w, b, k }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        let y = g.depthwise_conv1d(x, w, self.k / 2)?;
        g.add_bcast(y, b, 0)
    }
}

/// Lookup table `[rows, dim]`, initialised N(0, 1)/√dim.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let s = T::c(1.0 / (dim as f64).sqrt());
        let t = Tensor::<T>::randn(&[rows, dim], rng).map(|v| v * s);
        let table = ps.add(format!("{name}.table"), t);
        Self { table, rows, dim }
    }

    /// `[idx.len(), dim]`; an out-of-range index is an input error.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, idx: &[usize]) -> Result<Var> {
        let t = g.param(ps, self.table);
        g.gather(t, idx)
    }
}

/// Layer norm over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gain = ps.add(format!("{name}.gain"), Tensor::ones(&[dim]));
        let bias = ps.add_zeros(format!("{name}.bias"), &[dim]);
        Self { gain, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, 1e-5)?;
        let gain = g.param(ps, self.gain);
        let bias = g.param(ps, self.bias);
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

/// Checks that `x` is `[rows, cols]` with the given column count.
pub fn expect_cols<T: Scalar>(g: &Graph<T>, x: Var, cols: usize, what: &str) -> Result<usize> {
    let (r, c) = g.value(x).dims2()?;
    if c != cols {
        return Err(dim_err!("{what}: expected {cols} features, got {c}"));
    }
    Ok(r)
}
