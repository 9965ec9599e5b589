//! Two-view classification loss, signed consistency regularizer and their
//! convex combination. All logarithms here are natural.

use crate::error::{invalid, Error, Result};
use crate::ProbDist;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Sign of a sample's consistency term: clean and ID samples are pulled
/// toward agreeing views, OOD samples are pushed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Agree,
    Repel,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Agree => 1.0,
            Sign::Repel => -1.0,
        }
    }
}

/// Loss values for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_c: f64,
    pub l_o: f64,
    pub l_total: f64,
    pub alpha: f64,
    pub batch_size: usize,
}

#[inline]
fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// `-sum_c target_c ln p_c`.
pub fn cross_entropy(target: &[f64], p: &[f64]) -> f64 {
    -target.iter().zip(p).map(|(t, q)| t * ln_floor(*q)).sum::<f64>()
}

/// `KL(p || q) + KL(q || p)`.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (ln_floor(*a) - ln_floor(*b))).sum()
}

fn check_aligned(p: &[ProbDist], q: &[ProbDist], n: usize) -> Result<()> {
    if p.len() != q.len() || p.len() != n {
        return Err(invalid(format!(
            "batch lengths differ: {} first-view, {} second-view, {} other",
            p.len(),
            q.len(),
            n
        )));
    }
    if p.is_empty() {
        return Err(invalid("empty batch"));
    }
    for (a, b) in p.iter().zip(q) {
        if a.len() != b.len() {
            return Err(invalid("class counts differ between views"));
        }
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericFailure { layer: 0, detail: format!("{what} evaluated to {v}") })
    }
}

/// Mean over samples of the soft-target cross-entropy of both views.
pub fn classification_loss(p: &[ProbDist], p_prime: &[ProbDist], targets: &[ProbDist]) -> Result<f64> {
    check_aligned(p, p_prime, targets.len())?;
    let total: f64 = p
        .iter()
        .zip(p_prime)
        .zip(targets)
        .map(|((a, b), y)| cross_entropy(y.as_slice(), a.as_slice()) + cross_entropy(y.as_slice(), b.as_slice()))
        .sum();
    finite(total / p.len() as f64, "classification loss")
}

/// Mean over samples of `sign * (KL(p||p') + KL(p'||p))`.
pub fn consistency_loss(p: &[ProbDist], p_prime: &[ProbDist], signs: &[Sign]) -> Result<f64> {
    check_aligned(p, p_prime, signs.len())?;
    let total: f64 =
        p.iter().zip(p_prime).zip(signs).map(|((a, b), s)| s.value() * symmetric_kl(a.as_slice(), b.as_slice())).sum();
    finite(total / p.len() as f64, "consistency loss")
}

/// `(1 - alpha) * l_c + alpha * l_o`.
pub fn joint_loss(l_c: f64, l_o: f64, alpha: f64, batch_size: usize) -> Result<LossReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha {alpha} out of [0,1]")));
    }
    Ok(LossReport { l_c, l_o, l_total: (1.0 - alpha) * l_c + alpha * l_o, alpha, batch_size })
}
