use foley_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const KL_EPS: f64 = 1e-10;

/// Class probabilities from a classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPosterior {
    pub probs: Vec<f64>,
}

impl ClassifierPosterior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Input("empty posterior".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Input("posterior has a negative or non-finite entry".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("posterior sums to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Class indices ordered by decreasing probability (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }

    pub fn in_top(&self, class: usize, k: usize) -> bool {
        self.ranking().iter().take(k).any(|&c| c == class)
    }
}

/// Mean over pairs of `Σ p·ln((p + ε)/(q + ε))`.
pub fn kl_posterior(reference: &[ClassifierPosterior], generated: &[ClassifierPosterior]) -> Result<f64> {
    if reference.len() != generated.len() || reference.is_empty() {
        return Err(Error::Input(format!("{} reference vs {} generated posteriors", reference.len(), generated.len())));
    }
    let mut total = 0.0;
    for (p, q) in reference.iter().zip(generated) {
        if p.probs.len() != q.probs.len() {
            return Err(Error::Input("posteriors differ in class count".into()));
        }
        total += p.probs.iter().zip(&q.probs).map(|(a, b)| a * ((a + KL_EPS) / (b + KL_EPS)).ln()).sum::<f64>();
    }
    Ok(total / reference.len() as f64)
}
