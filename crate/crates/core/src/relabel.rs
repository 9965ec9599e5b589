//! Target distributions per selected subset and the mean-teacher model that
//! supplies pseudo-labels.

use crate::error::{invalid, Result};
use crate::nn::MlpModel;
use crate::prob::softmax;
use crate::selection::{BatchPartition, Subset};
use crate::ProbDist;

/// Label smoothing: `1 - epsilon` on `label`, `epsilon / (C - 1)` elsewhere.
pub fn smooth_label(label: usize, class_count: usize, epsilon: f64) -> Result<ProbDist> {
    if class_count < 2 {
        return Err(invalid("label smoothing needs at least two classes"));
    }
    if label >= class_count {
        return Err(invalid(format!("label {label} outside {class_count} classes")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(invalid(format!("epsilon {epsilon} out of [0,1)")));
    }
    let off = epsilon / (class_count - 1) as f64;
    let mut probs = vec![off; class_count];
    probs[label] = 1.0 - epsilon;
    Ok(ProbDist::from_normalized(probs))
}

/// Exponential moving average of the student's parameters. Never trained by
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTeacher {
    params: MlpModel,
    decay: f64,
}

impl MeanTeacher {
    /// Starts the teacher as a copy of `student`.
    pub fn new(student: &MlpModel, decay: f64) -> Result<Self> {
        Self::from_params(student.clone(), decay)
    }

    pub fn from_params(params: MlpModel, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(invalid(format!("teacher decay {decay} out of [0,1]")));
        }
        Ok(Self { params, decay })
    }

    pub fn params(&self) -> &MlpModel {
        &self.params
    }

    pub fn into_params(self) -> MlpModel {
        self.params
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }
}

/// `teacher <- decay * teacher + (1 - decay) * student`, elementwise.
pub fn ema_update(teacher: &mut MeanTeacher, student: &MlpModel) -> Result<()> {
    if !teacher.params.same_shape(student) {
        return Err(invalid("teacher and student shapes differ"));
    }
    let w = teacher.decay;
    for (t, s) in teacher.params.tensors_mut().zip(student.tensors()) {
        for (a, b) in t.iter_mut().zip(s) {
            *a = w * *a + (1.0 - w) * b;
        }
    }
    Ok(())
}

/// Teacher prediction on the unaugmented sample.
pub fn teacher_label_id(x: &[f64], teacher: &MeanTeacher) -> Result<ProbDist> {
    teacher.params.forward(x)
}

/// Softmax of the teacher's probabilities divided by `s`. Because the inputs
/// lie in `[0, 1]`, large `s` yields a nearly uniform target.
pub fn teacher_label_ood(x: &[f64], teacher: &MeanTeacher, s: f64) -> Result<ProbDist> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(invalid(format!("temperature {s} must be positive")));
    }
    Ok(flatten(&teacher.params.forward(x)?, s))
}

/// `softmax(p / s)`.
pub fn flatten(p: &ProbDist, s: f64) -> ProbDist {
    let scaled: Vec<f64> = p.as_slice().iter().map(|v| v / s).collect();
    ProbDist::from_normalized(softmax(&scaled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetOrigin {
    SmoothedGiven,
    TeacherId,
    TeacherOodFlattened,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    pub target: ProbDist,
    pub origin: TargetOrigin,
}

/// One target per batch sample: smoothed given label for clean samples,
/// teacher prediction for ID, flattened teacher prediction for OOD.
///
/// `inputs[i]` is the unaugmented feature vector of batch sample `i`.
pub fn assign_targets(
    inputs: &[&[f64]],
    given_labels: &[usize],
    partition: &BatchPartition,
    teacher: &MeanTeacher,
    epsilon: f64,
    s: f64,
) -> Result<Vec<TargetAssignment>> {
    if inputs.len() != given_labels.len() {
        return Err(invalid("inputs and labels differ in length"));
    }
    let subsets = partition
        .assignments()
        .filter(|a| a.len() == inputs.len())
        .ok_or_else(|| invalid("partition does not cover the batch"))?;
    let classes = teacher.params.class_count();
    inputs
        .iter()
        .zip(given_labels)
        .zip(subsets)
        .map(|((x, &label), subset)| {
            Ok(match subset {
                Subset::Clean => TargetAssignment {
                    target: smooth_label(label, classes, epsilon)?,
                    origin: TargetOrigin::SmoothedGiven,
                },
                Subset::Id => {
                    TargetAssignment { target: teacher_label_id(x, teacher)?, origin: TargetOrigin::TeacherId }
                }
                Subset::Ood => TargetAssignment {
                    target: teacher_label_ood(x, teacher, s)?,
                    origin: TargetOrigin::TeacherOodFlattened,
                },
            })
        })
        .collect()
}
