//! Conditional flow matching on straight noise-to-data paths and the Euler sampler.

use std::io::Write;

use foley_core::nn::ParamStore;
use foley_core::{Error, Graph, Result, Scalar, SeededRng, Tensor, Var};

use crate::conditioning::ConditionBundle;
use crate::mmdit::FlowModel;

pub const DEFAULT_STEPS: usize = 20;

/// A point on the path from noise `x0` to data `x1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample<T: Scalar> {
    pub x0: Tensor<T>,
    pub x1: Tensor<T>,
    pub t: f64,
    /// `t·x1 + (1 − t)·x0`
    pub x_t: Tensor<T>,
    /// `x1 − x0`
    pub u: Tensor<T>,
}

impl<T: Scalar> FlowSample<T> {
    pub fn new(x0: Tensor<T>, x1: Tensor<T>, t: f64) -> Result<Self> {
        if x0.shape() != x1.shape() {
            return Err(Error::Input(format!("noise {:?} and data {:?} latents differ in shape", x0.shape(), x1.shape())));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Input(format!("flow time {t} outside [0, 1]")));
        }
        let (a, b) = (T::c(t), T::c(1.0 - t));
        let x_t = x1.zip_map(&x0, |p, q| a * p + b * q)?;
        let u = x1.zip_map(&x0, |p, q| p - q)?;
        Ok(Self { x0, x1, t, x_t, u })
    }
}

/// `mean((v(t, C, x_t) − (x1 − x0))²)` as a graph node.
pub fn cfm_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &FlowModel,
    ps: &ParamStore<T>,
    bundle: &ConditionBundle,
    sample: &FlowSample<T>,
) -> Result<Var> {
    let x = g.constant(sample.x_t.clone());
    let v = model.velocity(g, ps, x, sample.t, bundle)?;
    let u = g.constant(sample.u.clone());
    g.mse(v, u)
}

/// Anything that maps `(t, x)` to a velocity of the same shape.
pub trait VelocityField<T: Scalar> {
    fn velocity(&self, t: f64, x: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar, F: Fn(f64, &Tensor<T>) -> Result<Tensor<T>>> VelocityField<T> for F {
    fn velocity(&self, t: f64, x: &Tensor<T>) -> Result<Tensor<T>> {
        self(t, x)
    }
}

/// The trained network under one fixed condition.
pub struct ModelField<'a, T: Scalar> {
    pub model: &'a FlowModel,
    pub ps: &'a ParamStore<T>,
    pub bundle: &'a ConditionBundle,
}

impl<T: Scalar> VelocityField<T> for ModelField<'_, T> {
    fn velocity(&self, t: f64, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let v = self.model.velocity(&mut g, self.ps, xv, t, self.bundle)?;
        Ok(g.value(v).clone())
    }
}

fn mean_abs<T: Scalar>(x: &Tensor<T>) -> f64 {
    x.data().iter().map(|v| v.as_f64().abs()).sum::<f64>() / x.numel().max(1) as f64
}

pub const TRACE_HEADER: &str = "step,t,mean_abs_v,mean_abs_x";

/// `x ← x + Δt·v(t, x)` for `steps` steps of `Δt = 1/steps` from `t = 0`.
/// With a trace writer, one CSV row per step is written after the update.
pub fn euler_integrate<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    x0: Tensor<T>,
    steps: usize,
    mut trace: Option<&mut dyn Write>,
) -> Result<Tensor<T>> {
    if steps == 0 {
        return Err(Error::Input("euler sampling needs at least one step".into()));
    }
    if let Some(w) = trace.as_deref_mut() {
        writeln!(w, "{TRACE_HEADER}")?;
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0;
    for i in 0..steps {
        let t = i as f64 * dt;
        let v = field.velocity(t, &x)?;
        if v.shape() != x.shape() {
            return Err(Error::Dimension(format!("velocity {:?} for state {:?}", v.shape(), x.shape())));
        }
        let h = T::c(dt);
        x = x.zip_map(&v, |a, b| a + h * b)?;
        if !x.all_finite() {
            return Err(Error::Numeric(format!("non-finite state at euler step {i}")));
        }
        if let Some(w) = trace.as_deref_mut() {
            writeln!(w, "{i},{t},{},{}", mean_abs(&v), mean_abs(&x))?;
        }
    }
    Ok(x)
}

/// Standard-normal noise of `shape` drawn from `seed`.
pub fn noise<T: Scalar>(shape: &[usize], seed: u64) -> Result<Tensor<T>> {
    let mut rng = SeededRng::new(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::c(rng.normal())).collect())
}

/// Integrates seeded noise of `shape` to `t = 1`.
pub fn euler_sample<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    shape: &[usize],
    seed: u64,
    steps: usize,
    trace: Option<&mut dyn Write>,
) -> Result<Tensor<T>> {
    euler_integrate(field, noise(shape, seed)?, steps, trace)
}
