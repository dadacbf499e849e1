//! Central finite-difference checks of reverse-mode gradients at 64-bit.
//!
//! The error reported per input is the norm-wise relative error
//! `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖, 1e-8)`.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::Contract(format!("gradient check needs a scalar, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

/// Checks the gradient of `f` with respect to each tensor in `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt_or_zeros(&g, *v).into_data();
        let mut xs = inputs.to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + eps;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - eps;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        rel_errors.push(rel_error(&analytic, &numeric));
    }
    Ok(GradCheck { rel_errors })
}

/// Checks the gradient of `f` with respect to every trainable parameter of `ps`.
pub fn check_params<F>(ps: &ParamStore<f64>, eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, ps)?;
    let grads = g.backward(out)?;
    let loaded: std::collections::HashMap<_, _> = g.params_of(ps).collect();
    let mut work = ps.clone();
    let mut rel_errors = Vec::new();
    for id in ps.ids().filter(|&id| ps.is_trainable(id)) {
        let analytic = match loaded.get(&id) {
            Some(&v) => grads.wrt_or_zeros(&g, v).into_data(),
            None => vec![0.0; ps.value(id).numel()],
        };
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + eps;
            let mut gu = Graph::new();
            let up = f(&mut gu, &work)?;
            let up = scalar_of(&gu, up)?;
            work.value_mut(id).data_mut()[j] = orig - eps;
            let mut gd = Graph::new();
            let down = f(&mut gd, &work)?;
            let down = scalar_of(&gd, down)?;
            work.value_mut(id).data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        rel_errors.push(rel_error(&analytic, &numeric));
    }
    Ok(GradCheck { rel_errors })
}
