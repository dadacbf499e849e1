//! Gaussian statistics of embedding sets and the Fréchet distance between them.

use foley_core::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

const NEG_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub mu: Vec<f64>,
    /// Row-major `dim × dim`.
    pub sigma: Vec<f64>,
    pub n: usize,
}

impl EmbeddingSet {
    /// Checks shapes, symmetry and positive semi-definiteness (within 1e-8).
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, n: usize) -> Result<Self> {
        let d = mu.len();
        if sigma.len() != d * d {
            return Err(Error::Input(format!("covariance has {} entries for dimension {d}", sigma.len())));
        }
        for i in 0..d {
            for j in 0..i {
                if (sigma[i * d + j] - sigma[j * d + i]).abs() > NEG_TOL {
                    return Err(Error::Input(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        let s = Self { mu, sigma, n };
        let min = SymmetricEigen::new(s.sigma_matrix()).eigenvalues.min();
        if d > 0 && min < -NEG_TOL {
            return Err(Error::Numeric(format!("covariance has eigenvalue {min}")));
        }
        Ok(s)
    }

    /// Mean and unbiased covariance of `rows`; a single row gives zero covariance.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().ok_or_else(|| Error::Input("no embeddings".into()))?.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Input("embeddings differ in dimension".into()));
        }
        let n = rows.len();
        let mut mu = vec![0.0; d];
        for r in rows {
            mu.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut sigma = vec![0.0; d * d];
        if n > 1 {
            for r in rows {
                for i in 0..d {
                    for j in 0..d {
                        sigma[i * d + j] += (r[i] - mu[i]) * (r[j] - mu[j]) / (n - 1) as f64;
                    }
                }
            }
        }
        Self::new(mu, sigma, n)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.sigma)
    }
}

fn psd_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let m = (&m + m.transpose()) * 0.5;
    let mut e = SymmetricEigen::new(m);
    for v in e.eigenvalues.iter_mut() {
        if *v < -NEG_TOL {
            return Err(Error::Numeric(format!("{what} has eigenvalue {v}")));
        }
        *v = v.max(0.0);
    }
    Ok(e)
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^½)`, with the trace of the square
/// root taken from the eigenvalues of the symmetric `Σ_a^½ Σ_b Σ_a^½`.
pub fn frechet_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!("embedding dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let (sa, sb) = (a.sigma_matrix(), b.sigma_matrix());
    let ea = psd_eigen(sa.clone(), "first covariance")?;
    let root_a = &ea.eigenvectors * DMatrix::from_diagonal(&ea.eigenvalues.map(f64::sqrt)) * ea.eigenvectors.transpose();
    let inner = psd_eigen(&root_a * &sb * &root_a, "covariance product")?;
    let tr_sqrt: f64 = inner.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let dmu = DVector::from_column_slice(&a.mu) - DVector::from_column_slice(&b.mu);
    let fd = dmu.norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    Ok(fd.max(0.0))
}
