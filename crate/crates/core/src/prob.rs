//! Discrete probability distributions over class indices.

use crate::error::{invalid, Result};

/// Tolerance on `|sum - 1|` accepted by [`ProbDist::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A length-C vector of non-negative reals summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Validates and wraps `probs`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("probability vector is empty"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(invalid(format!("probability entry {p} is not a finite non-negative value")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {sum}, expected 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        assert!(classes > 0, "uniform distribution needs at least one class");
        Self(vec![1.0 / classes as f64; classes])
    }

    /// Numerically stable softmax of `logits` (max-logit subtraction).
    pub fn softmax(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    /// Wraps a vector the caller already knows to be normalized.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        Self(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl AsRef<[f64]> for ProbDist {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `log softmax(logits)` without forming the probabilities first.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_vectors() {
        assert!(ProbDist::new(vec![]).is_err());
        assert!(ProbDist::new(vec![0.5, 0.6]).is_err());
        assert!(ProbDist::new(vec![1.5, -0.5]).is_err());
        assert!(ProbDist::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbDist::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn softmax_closed_form() {
        let p = ProbDist::softmax(&[2f64.ln(), 0.0]);
        assert!((p.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = ProbDist::softmax(&[1e308, 0.0, -1e308]);
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
        let lp = log_softmax(&[1000.0, 0.0]);
        assert_eq!(lp[0], 0.0);
        assert_eq!(lp[1], -1000.0);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
