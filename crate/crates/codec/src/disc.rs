//! Two-scale patch discriminator over log-mel images and its R1 penalty.

use foley_core::nn::{Conv2d, ParamStore};
use foley_core::optim::GradStore;
use foley_core::{Dual, Error, Graph, Result, Scalar, SeededRng, Tensor, Var};

/// A differentiable scalar score of one input, usable at any scalar type.
pub trait Critic {
    fn score<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    scales: Vec<Vec<Conv2d>>,
    norm_shift: f64,
    norm_scale: f64,
}

const SLOPE: f64 = 0.2;

impl Discriminator {
    /// Parameter names start with `disc.`.
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, width: usize, norm_shift: f64, norm_scale: f64, rng: &mut SeededRng) -> Self {
        let chans = [1, width, 2 * width, 2 * width];
        let scales = (0..2)
            .map(|s| {
                let mut layers: Vec<Conv2d> = (0..3)
                    .map(|i| Conv2d::new(ps, &format!("disc.s{s}.c{i}"), chans[i], chans[i + 1], (3, 3), (2, 2), (1, 1), rng))
                    .collect();
                layers.push(Conv2d::new(ps, &format!("disc.s{s}.c3"), chans[3], 1, (3, 3), (1, 1), (1, 1), rng));
                layers
            })
            .collect();
        Self { scales, norm_shift, norm_scale }
    }
}

impl Critic for Discriminator {
    /// Mean patch logit over both scales for a log-mel `[n_mels, T]`.
    fn score<T: Scalar>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!("discriminator expects [n_mels, T], got {shape:?}")));
        }
        let x = g.add_scalar(x, -self.norm_shift)?;
        let x = g.scale(x, 1.0 / self.norm_scale)?;
        let img = g.reshape(x, &[1, shape[0], shape[1]])?;
        let mut scores = Vec::with_capacity(self.scales.len());
        for (s, layers) in self.scales.iter().enumerate() {
            let mut h = if s == 0 { img } else { g.pool_pairs(img)? };
            for (i, l) in layers.iter().enumerate() {
                h = l.forward(g, ps, h)?;
                if i + 1 < layers.len() {
                    h = g.leaky_relu(h, SLOPE)?;
                }
            }
            scores.push(g.mean(h)?);
        }
        let mut acc = scores[0];
        for &v in &scores[1..] {
            acc = g.add(acc, v)?;
        }
        g.scale(acc, 1.0 / scores.len() as f64)
    }
}

/// R1 penalty `mean_i ‖∇ₓ D(xᵢ)‖²` over `reals` and its parameter gradient.
///
/// The parameter gradient `(2/B) Σᵢ ∂²D/∂θ∂x · ∇ₓD(xᵢ)` is a Hessian-vector
/// product, taken by pushing the tangent `∇ₓD(xᵢ)` through a second reverse
/// pass run in dual numbers.
pub fn r1_penalty<T: Scalar, C: Critic>(critic: &C, ps: &ParamStore<T>, reals: &[Tensor<T>]) -> Result<(f64, GradStore<T>)> {
    if reals.is_empty() {
        return Err(Error::Input("r1 penalty needs at least one sample".into()));
    }
    let dual_ps: ParamStore<Dual<T>> = ps.cast();
    let mut grads = GradStore::zeros_like(ps);
    let mut penalty = 0.0;
    let w = T::c(2.0 / reals.len() as f64);
    for x in reals {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let s = critic.score(&mut g, ps, xv)?;
        let gx = g.backward(s)?.wrt_or_zeros(&g, xv);
        penalty += gx.sq_norm().as_f64();

        let xd = Tensor::new(x.shape(), x.data().iter().zip(gx.data()).map(|(&a, &b)| Dual::new(a, b)).collect())?;
        let mut gd: Graph<Dual<T>> = Graph::new();
        let xv = gd.constant(xd);
        let s = critic.score(&mut gd, &dual_ps, xv)?;
        let back = gd.backward(s)?;
        for (id, v) in gd.params_of(&dual_ps) {
            if let Some(t) = back.wrt(v) {
                let hv: Vec<T> = t.data().iter().map(|d| d.eps * w).collect();
                grads.add(id, &Tensor::new(t.shape(), hv)?)?;
            }
        }
    }
    Ok((penalty / reals.len() as f64, grads))
}
