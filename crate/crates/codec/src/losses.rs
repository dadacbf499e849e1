//! Codec training objectives as graph ops.

use foley_core::{Error, Graph, Result, Scalar, Var};

/// Mean squared error between input and reconstruction.
pub fn recon_mse<T: Scalar>(g: &mut Graph<T>, a_in: Var, a_d: Var) -> Result<Var> {
    g.mse(a_in, a_d)
}

/// KL from `N(mu, sigma²)` to `N(0, 1)` for `[d, n]` moments: summed over the
/// `d` channels, averaged over the `n` frames.
pub fn kl_divergence<T: Scalar>(g: &mut Graph<T>, mu: Var, log_sigma: Var) -> Result<Var> {
    let shape = g.shape(mu).to_vec();
    if shape.len() != 2 || g.shape(log_sigma) != shape.as_slice() {
        return Err(Error::Dimension(format!("kl needs matching [d, n] moments, got {shape:?}")));
    }
    let (d, n) = (shape[0], shape[1]);
    let mu2 = g.square(mu)?;
    let ls2 = g.scale(log_sigma, 2.0)?;
    let var = g.exp(ls2)?;
    let a = g.add(mu2, var)?;
    let a = g.sub(a, ls2)?;
    let s = g.sum(a)?;
    let s = g.add_scalar(s, -(d as f64) * n as f64)?;
    g.scale(s, 0.5 / n as f64)
}

/// Batch mean of per-sample KL terms, then `max(0, · − delta)`.
pub fn kl_loss_with_margin<T: Scalar>(g: &mut Graph<T>, kls: &[Var], delta: f64) -> Result<Var> {
    let m = batch_mean(g, kls)?;
    let m = g.add_scalar(m, -delta)?;
    g.relu(m)
}

/// `−mean D(fake)`.
pub fn generator_loss<T: Scalar>(g: &mut Graph<T>, fake_scores: &[Var]) -> Result<Var> {
    let m = batch_mean(g, fake_scores)?;
    g.neg(m)
}

/// `mean max(0, 1 − D(real)) + mean max(0, 1 + D(fake))`.
pub fn hinge_loss<T: Scalar>(g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
    let mut r = Vec::with_capacity(real.len());
    for &v in real {
        let n = g.neg(v)?;
        let n = g.add_scalar(n, 1.0)?;
        r.push(g.relu(n)?);
    }
    let mut f = Vec::with_capacity(fake.len());
    for &v in fake {
        let n = g.add_scalar(v, 1.0)?;
        f.push(g.relu(n)?);
    }
    let a = batch_mean(g, &r)?;
    let b = batch_mean(g, &f)?;
    g.add(a, b)
}

/// Mean of scalar nodes.
pub fn batch_mean<T: Scalar>(g: &mut Graph<T>, xs: &[Var]) -> Result<Var> {
    let (&first, rest) = xs.split_first().ok_or_else(|| Error::Input("empty batch".into()))?;
    let mut acc = first;
    for &v in rest {
        acc = g.add(acc, v)?;
    }
    g.scale(acc, 1.0 / xs.len() as f64)
}
