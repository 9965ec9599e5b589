//! Sample selection: clean likelihood from the Jensen-Shannon divergence
//! between prediction and given label, OOD likelihood from two-view
//! disagreement, the epoch-wise clean threshold, and a per-batch small-loss
//! selector kept for comparison.

use crate::error::{invalid, Result};
use crate::ProbDist;

/// Label smoothing used only inside the divergence, to keep logarithms finite.
pub const JS_SMOOTHING: f64 = 1e-6;

/// Default OOD threshold. The OOD likelihood is 0 or 1, so any value in
/// (0, 1) behaves the same.
pub const DEFAULT_TAU_OOD: f64 = 0.5;

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
///
/// `y` must be strictly positive (a smoothed label); zero entries of `p`
/// contribute nothing.
pub fn js_divergence(p: &ProbDist, y: &ProbDist) -> Result<f64> {
    if p.len() != y.len() {
        return Err(invalid(format!("distributions have {} and {} classes", p.len(), y.len())));
    }
    if let Some(c) = y.as_slice().iter().position(|&v| v <= 0.0) {
        return Err(invalid(format!("label distribution has zero mass at class {c}; smooth it first")));
    }
    let mut d = 0.0;
    for (&a, &b) in p.as_slice().iter().zip(y.as_slice()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            d += 0.5 * a * (a / m).log2();
        }
        d += 0.5 * b * (b / m).log2();
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Divergence `d` and clean likelihood `1 - d` of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanScore {
    pub d: f64,
    pub p_clean: f64,
}

pub fn clean_likelihood(p: &ProbDist, y_smoothed: &ProbDist) -> Result<CleanScore> {
    let d = js_divergence(p, y_smoothed)?;
    Ok(CleanScore { d, p_clean: 1.0 - d })
}

/// `min(1, |argmax p - argmax p'|)`: 0 when the views agree, 1 otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodScore {
    pub p_ood: f64,
}

pub fn ood_likelihood(p: &ProbDist, p_prime: &ProbDist) -> Result<OodScore> {
    if p.len() != p_prime.len() {
        return Err(invalid(format!("views have {} and {} classes", p.len(), p_prime.len())));
    }
    let gap = p.argmax().abs_diff(p_prime.argmax()) as f64;
    Ok(OodScore { p_ood: gap.min(1.0) })
}

/// Parameters of the clean-threshold schedule: a linear ramp from 0 to
/// `tau_c` over the warm-up epochs, then linear growth to `tau_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSchedule {
    pub tau_c: f64,
    pub tau_m: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0 && self.tau_c < 1.0) {
            return Err(invalid(format!("tau_c {} out of (0,1)", self.tau_c)));
        }
        if !(self.tau_m > 0.0 && self.tau_m <= 1.0) {
            return Err(invalid(format!("tau_m {} out of (0,1]", self.tau_m)));
        }
        if self.tau_c >= self.tau_m {
            return Err(invalid("tau_c must be below tau_m"));
        }
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(invalid("need 0 < warmup_epochs < total_epochs"));
        }
        Ok(())
    }
}

/// Clean threshold for 1-based epoch `t`.
pub fn dynamic_threshold(t: usize, sched: &ThresholdSchedule) -> Result<f64> {
    sched.validate()?;
    if t == 0 || t > sched.total_epochs {
        return Err(invalid(format!("epoch {t} outside 1..={}", sched.total_epochs)));
    }
    let tw = sched.warmup_epochs as f64;
    let t_f = t as f64;
    if t <= sched.warmup_epochs {
        Ok(t_f / tw * sched.tau_c)
    } else {
        // Convex form so both endpoints are hit exactly.
        let frac = (t - sched.warmup_epochs) as f64 / (sched.total_epochs - sched.warmup_epochs) as f64;
        Ok(sched.tau_c * (1.0 - frac) + sched.tau_m * frac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    Clean,
    Id,
    Ood,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Clean => "clean",
            Subset::Id => "id",
            Subset::Ood => "ood",
        }
    }
}

/// Disjoint clean / ID / OOD index sets, each sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchPartition {
    pub clean: Vec<usize>,
    pub id: Vec<usize>,
    pub ood: Vec<usize>,
}

impl BatchPartition {
    /// Builds a partition from one subset label per batch position.
    pub fn from_assignments(assigned: &[Subset]) -> Self {
        let mut out = Self::default();
        for (i, s) in assigned.iter().enumerate() {
            match s {
                Subset::Clean => out.clean.push(i),
                Subset::Id => out.id.push(i),
                Subset::Ood => out.ood.push(i),
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.clean.len() + self.id.len() + self.ood.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Subset label per batch position; `None` if the sets do not cover
    /// `0..len()` exactly once.
    pub fn assignments(&self) -> Option<Vec<Subset>> {
        let mut out = vec![None; self.len()];
        for (set, tag) in [(&self.clean, Subset::Clean), (&self.id, Subset::Id), (&self.ood, Subset::Ood)] {
            for &i in set {
                match out.get_mut(i) {
                    Some(slot @ None) => *slot = Some(tag),
                    _ => return None,
                }
            }
        }
        out.into_iter().collect()
    }
}

/// Which prediction Criterion-1 scoring uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CleanView {
    /// The first view's prediction.
    #[default]
    First,
    /// The average of both views' predictions.
    Mean,
}

/// Per-sample selection scores and the resulting subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleScore {
    pub p_clean: f64,
    pub p_ood: f64,
    pub subset: Subset,
}

/// Scores every sample of a batch and assigns it to a subset: clean iff
/// `p_clean > tau_clean`, otherwise OOD iff `p_ood > tau_ood`, else ID.
pub fn score_batch(
    p: &[ProbDist],
    p_prime: &[ProbDist],
    y_smoothed: &[ProbDist],
    tau_clean: f64,
    tau_ood: f64,
    view: CleanView,
) -> Result<Vec<SampleScore>> {
    if p.len() != p_prime.len() || p.len() != y_smoothed.len() {
        return Err(invalid("prediction and label batches differ in length"));
    }
    if !(0.0..=1.0).contains(&tau_clean) {
        return Err(invalid(format!("tau_clean {tau_clean} out of [0,1]")));
    }
    if !(tau_ood > 0.0 && tau_ood < 1.0) {
        return Err(invalid(format!("tau_ood {tau_ood} out of (0,1)")));
    }
    p.iter()
        .zip(p_prime)
        .zip(y_smoothed)
        .map(|((a, b), y)| {
            let clean = match view {
                CleanView::First => clean_likelihood(a, y)?,
                CleanView::Mean => {
                    let avg: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, z)| 0.5 * (x + z)).collect();
                    clean_likelihood(&ProbDist::from_normalized(avg), y)?
                }
            };
            let ood = ood_likelihood(a, b)?;
            let subset = if clean.p_clean > tau_clean {
                Subset::Clean
            } else if ood.p_ood > tau_ood {
                Subset::Ood
            } else {
                Subset::Id
            };
            Ok(SampleScore { p_clean: clean.p_clean, p_ood: ood.p_ood, subset })
        })
        .collect()
}

/// Splits a batch into clean / ID / OOD subsets using the first view for the
/// clean criterion.
pub fn partition_batch(
    p: &[ProbDist],
    p_prime: &[ProbDist],
    y_smoothed: &[ProbDist],
    tau_clean: f64,
    tau_ood: f64,
) -> Result<BatchPartition> {
    let scores = score_batch(p, p_prime, y_smoothed, tau_clean, tau_ood, CleanView::First)?;
    let subsets: Vec<Subset> = scores.iter().map(|s| s.subset).collect();
    Ok(BatchPartition::from_assignments(&subsets))
}

/// Per-batch small-loss selection: keeps the `ceil((1 - drop_rate) * B)`
/// smallest losses, ties going to the lower index. Returned indices are
/// sorted ascending.
pub fn small_loss_select(losses: &[f64], drop_rate: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(invalid(format!("drop_rate {drop_rate} out of [0,1)")));
    }
    // Tolerance absorbs representation error such as (1 - 1/3) * 3.
    let keep = (((1.0 - drop_rate) * losses.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
    kept.sort_unstable();
    Ok(kept)
}
