//! Gradient accumulation, global-norm clipping and AdamW.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph};
use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One gradient tensor per parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct GradStore<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn zeros_like(ps: &ParamStore<T>) -> Self {
        Self { grads: ps.ids().map(|id| Tensor::zeros(ps.value(id).shape())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn add(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        self.grads[id.0].add_assign(g)
    }

    /// Adds the gradients of every parameter of `ps` that was loaded on `graph`.
    pub fn accumulate(&mut self, graph: &Graph<T>, grads: &Gradients<T>, ps: &ParamStore<T>) -> Result<()> {
        for (id, v) in graph.params_of(ps) {
            if let Some(g) = grads.wrt(v) {
                self.grads[id.0].add_assign(g)?;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        let s = T::c(s);
        for g in &mut self.grads {
            g.scale_in_place(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.sq_norm().as_f64()).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.all_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with decoupled weight decay. Decay applies to matrices and kernels
/// (rank ≥ 2) only; vectors such as biases and gains are not decayed.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(ps: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        let z = |id| Tensor::zeros(ps.value(id).shape());
        Self { cfg, m: ps.ids().map(z).collect(), v: ps.ids().map(z).collect(), t: 0 }
    }

    /// One update of every trainable parameter; frozen parameters and their
    /// moments are left untouched.
    pub fn step(&mut self, ps: &mut ParamStore<T>, grads: &GradStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != ps.len() {
            return Err(Error::Contract("optimizer state does not match parameter store".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let (b1t, b2t) = (T::c(b1), T::c(b2));
        let (one_m_b1, one_m_b2) = (T::c(1.0 - b1), T::c(1.0 - b2));
        let step = T::c(lr / bc1);
        let inv_bc2 = T::c(1.0 / bc2);
        let eps = T::c(self.cfg.eps);
        for id in ps.ids().collect::<Vec<_>>() {
            if !ps.is_trainable(id) {
                continue;
            }
            let g = grads.get(id);
            let decay = if ps.value(id).rank() >= 2 { T::c(1.0 - lr * self.cfg.weight_decay) } else { T::one() };
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = ps.value_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1t * m[i] + one_m_b1 * gi;
                v[i] = b2t * v[i] + one_m_b2 * gi * gi;
                let denom = (v[i] * inv_bc2).sqrt() + eps;
                p[i] = p[i] * decay - step * m[i] / denom;
            }
        }
        Ok(())
    }
}
