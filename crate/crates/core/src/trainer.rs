//! Training loop: per-iteration view generation, selection, relabeling,
//! warm-up gating, optimizer and teacher updates, and per-epoch metrics.
//!
//! Baseline arms (`Standard`, `SmallLoss`) go through the same loop and
//! augmentation so that only the selection and target logic differs. They
//! report the samples they train on as `clean` and the samples they discard
//! as `id`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{augment, Augmentation, NoisyDataset, Provenance, RawDataset, ViewPair};
use crate::error::{invalid, Error, Result};
use crate::nn::{backward, lr_schedule, optimizer_step, MlpModel, OptimizerState};
use crate::objective::{cross_entropy, LossReport, Sign};
use crate::relabel::{assign_targets, ema_update, smooth_label, MeanTeacher};
use crate::selection::{
    dynamic_threshold, score_batch, small_loss_select, CleanView, SampleScore, Subset, ThresholdSchedule,
};
use crate::ProbDist;

/// Number of trailing epochs averaged for final accuracy.
pub const FINAL_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub t_max: usize,
    pub t_w: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_start_epoch: usize,
    /// Teacher decay.
    pub omega: f64,
    /// Label smoothing for clean targets.
    pub epsilon: f64,
    /// Temperature flattening OOD targets.
    pub s: f64,
    /// Weight of the consistency term.
    pub alpha: f64,
    pub tau_c: f64,
    pub tau_m: f64,
    pub tau_ood: f64,
    pub sigma_aug: f64,
    pub rho_aug: f64,
    /// Label smoothing inside the clean-likelihood divergence.
    pub delta_js: f64,
    pub clean_view: CleanView,
    /// Final per-batch drop rate of the small-loss baseline, reached
    /// linearly over the warm-up epochs.
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            t_max: 100,
            t_w: 10,
            batch_size: 64,
            base_lr: 0.001,
            decay_start_epoch: 40,
            omega: 0.99,
            epsilon: 0.6,
            s: 10.0,
            alpha: 0.6,
            tau_c: 0.9,
            tau_m: 0.95,
            tau_ood: 0.5,
            sigma_aug: 0.1,
            rho_aug: 0.1,
            delta_js: 0.6,
            clean_view: CleanView::First,
            drop_rate: 0.5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Schedule lengths and batch size of the full-scale image setting.
    pub fn full_scale() -> Self {
        Self { t_max: 200, decay_start_epoch: 80, batch_size: 128, ..Self::default() }
    }

    pub fn schedule(&self) -> ThresholdSchedule {
        ThresholdSchedule { tau_c: self.tau_c, tau_m: self.tau_m, warmup_epochs: self.t_w, total_epochs: self.t_max }
    }

    pub fn augmentation(&self) -> Augmentation {
        Augmentation { sigma: self.sigma_aug, dropout: self.rho_aug }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        let unit = |name: &str, v: f64, lo_open: bool, hi_open: bool| -> Result<()> {
            let lo_ok = if lo_open { v > 0.0 } else { v >= 0.0 };
            let hi_ok = if hi_open { v < 1.0 } else { v <= 1.0 };
            if lo_ok && hi_ok {
                Ok(())
            } else {
                Err(invalid(format!("{name} = {v} out of range")))
            }
        };
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid("base_lr must be positive"));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(invalid("s must be positive"));
        }
        if !(self.sigma_aug >= 0.0 && self.sigma_aug.is_finite()) {
            return Err(invalid("sigma_aug must be non-negative"));
        }
        unit("omega", self.omega, false, false)?;
        unit("epsilon", self.epsilon, false, true)?;
        unit("alpha", self.alpha, false, false)?;
        unit("tau_ood", self.tau_ood, true, true)?;
        unit("rho_aug", self.rho_aug, false, true)?;
        unit("delta_js", self.delta_js, true, true)?;
        unit("drop_rate", self.drop_rate, false, true)?;
        Ok(())
    }
}

/// Which stages of the noise-robust pipeline are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Clean samples only.
    C,
    /// Clean plus teacher-relabeled ID samples.
    CI,
    /// Clean, ID and flattened-teacher OOD samples.
    CIO,
    /// Everything, plus the consistency term.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Cross-entropy on given one-hot labels, no selection.
    Standard,
    /// Per-batch small-loss selection on one-hot labels.
    SmallLoss,
    /// Global selection with relabeling.
    JoSrc(Ablation),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::SmallLoss => "smallloss-baseline",
            Method::JoSrc(Ablation::Full) => "josrc",
            Method::JoSrc(Ablation::C) => "ablation-C",
            Method::JoSrc(Ablation::CI) => "ablation-CI",
            Method::JoSrc(Ablation::CIO) => "ablation-CIO",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            Method::Standard,
            Method::SmallLoss,
            Method::JoSrc(Ablation::Full),
            Method::JoSrc(Ablation::C),
            Method::JoSrc(Ablation::CI),
            Method::JoSrc(Ablation::CIO),
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }
}

/// Selection precision per subset; `None` when nothing was selected.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubsetPrecision {
    pub clean: Option<f64>,
    pub id: Option<f64>,
    pub ood: Option<f64>,
}

/// Counts of selected subset against hidden provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelectionTally {
    counts: [[usize; 3]; 3],
}

fn subset_slot(s: Subset) -> usize {
    match s {
        Subset::Clean => 0,
        Subset::Id => 1,
        Subset::Ood => 2,
    }
}

fn provenance_slot(p: Provenance) -> usize {
    match p {
        Provenance::Clean => 0,
        Provenance::IdNoisy => 1,
        Provenance::OodNoisy => 2,
    }
}

impl SelectionTally {
    pub fn record(&mut self, subset: Subset, provenance: Provenance) {
        self.counts[subset_slot(subset)][provenance_slot(provenance)] += 1;
    }

    pub fn selected(&self, subset: Subset) -> usize {
        self.counts[subset_slot(subset)].iter().sum()
    }

    pub fn precision(&self) -> SubsetPrecision {
        let prec = |s: usize| {
            let row = self.counts[s];
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[s] as f64 / total as f64)
        };
        SubsetPrecision { clean: prec(0), id: prec(1), ood: prec(2) }
    }
}

/// Precision of each selected subset against provenance:
/// `|selected-k ∩ provenance-k| / |selected-k|`.
pub fn selection_precision(assigned: &[Subset], provenance: &[Provenance]) -> Result<SubsetPrecision> {
    if assigned.len() != provenance.len() {
        return Err(invalid("assignment and provenance lengths differ"));
    }
    let mut tally = SelectionTally::default();
    for (s, p) in assigned.iter().zip(provenance) {
        tally.record(*s, *p);
    }
    Ok(tally.precision())
}

/// Fraction of argmax-correct predictions on unaugmented test features.
pub fn evaluate(model: &MlpModel, test_set: &RawDataset) -> Result<f64> {
    if test_set.is_empty() {
        return Err(invalid("empty test set"));
    }
    let mut correct = 0usize;
    for i in 0..test_set.len() {
        if model.forward(test_set.features(i))?.argmax() == test_set.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub tau_clean: f64,
    pub n_clean: usize,
    pub n_id: usize,
    pub n_ood: usize,
    pub precision: SubsetPrecision,
    /// Batch-averaged losses; `None` if every batch of the epoch was skipped.
    pub loss_c: Option<f64>,
    pub loss_o: Option<f64>,
    pub loss_total: Option<f64>,
    pub test_acc: f64,
    pub skipped_batches: usize,
}

/// One row of the optional per-sample selection dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRow {
    pub epoch: usize,
    pub idx: usize,
    pub p_clean: f64,
    pub p_ood: f64,
    pub assigned: Subset,
    pub provenance: Provenance,
}

/// What one mini-batch iteration did.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub scores: Vec<SampleScore>,
    /// Loss of the update; `None` when the update was skipped.
    pub loss: Option<LossReport>,
    /// Batch positions that contributed to the gradient.
    pub used: Vec<usize>,
}

/// Mutable training state: student, teacher, optimizer and random stream.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    data: &'a NoisyDataset,
    config: TrainConfig,
    method: Method,
    student: MlpModel,
    teacher: MeanTeacher,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    iterations: u64,
    teacher_updates: u64,
}

impl<'a> Trainer<'a> {
    /// Initializes the student from `config.seed` and the teacher as a copy.
    pub fn new(data: &'a NoisyDataset, config: TrainConfig, method: Method) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut dims = vec![data.dim()];
        dims.extend(&config.hidden);
        dims.push(data.class_count());
        let student = MlpModel::init(&dims, &mut rng)?;
        Self::assemble(data, config, method, student, rng)
    }

    /// Starts from an explicit student model.
    pub fn with_model(data: &'a NoisyDataset, config: TrainConfig, method: Method, student: MlpModel) -> Result<Self> {
        config.validate()?;
        if student.input_dim() != data.dim() || student.class_count() != data.class_count() {
            return Err(invalid("model does not match dataset dimensions"));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::assemble(data, config, method, student, rng)
    }

    fn assemble(
        data: &'a NoisyDataset,
        config: TrainConfig,
        method: Method,
        student: MlpModel,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("empty training set"));
        }
        let teacher = MeanTeacher::new(&student, config.omega)?;
        let optimizer = OptimizerState::new(&student, config.base_lr);
        Ok(Self { data, config, method, student, teacher, optimizer, rng, iterations: 0, teacher_updates: 0 })
    }

    pub fn student(&self) -> &MlpModel {
        &self.student
    }

    pub fn teacher(&self) -> &MeanTeacher {
        &self.teacher
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn teacher_updates(&self) -> u64 {
        self.teacher_updates
    }

    pub fn into_models(self) -> (MlpModel, MeanTeacher) {
        (self.student, self.teacher)
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.optimizer.learning_rate = lr;
    }

    fn is_warmup(&self, epoch: usize) -> bool {
        epoch < self.config.t_w
    }

    /// Draws views for `batch` (dataset indices) and predicts both of them.
    pub fn predict_views(&mut self, batch: &[usize]) -> Result<(Vec<ViewPair>, Vec<ProbDist>, Vec<ProbDist>)> {
        let aug = self.config.augmentation();
        let views: Vec<ViewPair> =
            batch.iter().map(|&i| augment(self.data.features(i), i, &aug, &mut self.rng)).collect();
        let p = views.iter().map(|v| self.student.forward(&v.v)).collect::<Result<Vec<_>>>()?;
        let q = views.iter().map(|v| self.student.forward(&v.v_prime)).collect::<Result<Vec<_>>>()?;
        Ok((views, p, q))
    }

    /// Runs one iteration on `batch` at 1-based `epoch` with clean threshold
    /// `tau_clean`, then updates the teacher.
    pub fn step(&mut self, batch: &[usize], epoch: usize, tau_clean: f64) -> Result<BatchOutcome> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let (views, p, q) = self.predict_views(batch)?;
        let classes = self.data.class_count();
        let given: Vec<usize> = batch.iter().map(|&i| self.data.given_labels()[i]).collect();

        let (scores, targets, signs, used, alpha) = match self.method {
            Method::JoSrc(mode) => {
                let y_js = given
                    .iter()
                    .map(|&l| smooth_label(l, classes, self.config.delta_js))
                    .collect::<Result<Vec<_>>>()?;
                let scores = score_batch(&p, &q, &y_js, tau_clean, self.config.tau_ood, self.config.clean_view)?;
                let subsets: Vec<Subset> = scores.iter().map(|s| s.subset).collect();
                let partition = crate::selection::BatchPartition::from_assignments(&subsets);
                let inputs: Vec<&[f64]> = batch.iter().map(|&i| self.data.features(i)).collect();
                let assigned =
                    assign_targets(&inputs, &given, &partition, &self.teacher, self.config.epsilon, self.config.s)?;
                let targets: Vec<ProbDist> = assigned.into_iter().map(|a| a.target).collect();
                let signs: Vec<Sign> =
                    subsets.iter().map(|s| if *s == Subset::Ood { Sign::Repel } else { Sign::Agree }).collect();
                let warm = self.is_warmup(epoch);
                let used: Vec<usize> = (0..batch.len())
                    .filter(|&k| match (warm, subsets[k], mode) {
                        (_, Subset::Clean, _) => true,
                        (true, _, _) => false,
                        (false, Subset::Id, Ablation::C) => false,
                        (false, Subset::Id, _) => true,
                        (false, Subset::Ood, Ablation::CIO | Ablation::Full) => true,
                        (false, Subset::Ood, _) => false,
                    })
                    .collect();
                let alpha = if !warm && mode == Ablation::Full { self.config.alpha } else { 0.0 };
                (scores, targets, signs, used, alpha)
            }
            Method::Standard | Method::SmallLoss => {
                let targets = given.iter().map(|&l| smooth_label(l, classes, 0.0)).collect::<Result<Vec<_>>>()?;
                let used = if self.method == Method::Standard {
                    (0..batch.len()).collect()
                } else {
                    let losses: Vec<f64> = (0..batch.len())
                        .map(|k| {
                            cross_entropy(targets[k].as_slice(), p[k].as_slice())
                                + cross_entropy(targets[k].as_slice(), q[k].as_slice())
                        })
                        .collect();
                    let ramp = (epoch as f64 / self.config.t_w as f64).min(1.0);
                    small_loss_select(&losses, self.config.drop_rate * ramp)?
                };
                let mut scores: Vec<SampleScore> = (0..batch.len())
                    .map(|_| SampleScore { p_clean: f64::NAN, p_ood: f64::NAN, subset: Subset::Id })
                    .collect();
                for &k in &used {
                    scores[k].subset = Subset::Clean;
                }
                (scores, targets, vec![Sign::Agree; batch.len()], used, 0.0)
            }
        };

        let loss = if used.is_empty() {
            None
        } else {
            let sub_views: Vec<ViewPair> = used.iter().map(|&k| views[k].clone()).collect();
            let sub_targets: Vec<ProbDist> = used.iter().map(|&k| targets[k].clone()).collect();
            let sub_signs: Vec<Sign> = used.iter().map(|&k| signs[k]).collect();
            let out = backward(&self.student, &sub_views, &sub_targets, &sub_signs, alpha)?;
            optimizer_step(&mut self.student, &mut self.optimizer, &out.grads)?;
            Some(out.loss)
        };
        ema_update(&mut self.teacher, &self.student)?;
        self.iterations += 1;
        self.teacher_updates += 1;
        Ok(BatchOutcome { scores, loss, used })
    }

    /// One pass over a fresh permutation of the training set.
    pub fn run_epoch(
        &mut self,
        epoch: usize,
        test_set: &RawDataset,
        mut dump: Option<&mut Vec<SelectionRow>>,
    ) -> Result<EpochRecord> {
        let lr = lr_schedule(epoch, self.config.t_max, self.config.decay_start_epoch, self.config.base_lr);
        self.set_learning_rate(lr);
        let tau_clean = dynamic_threshold(epoch, &self.config.schedule())?;
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut self.rng);

        let mut tally = SelectionTally::default();
        let mut sums = [0.0; 3];
        let mut updates = 0usize;
        let mut skipped = 0usize;
        for (iteration, batch) in order.chunks(self.config.batch_size).enumerate() {
            let outcome = self.step(batch, epoch, tau_clean).map_err(|e| Error::Training {
                epoch,
                iteration,
                source: Box::new(e),
            })?;
            for (k, score) in outcome.scores.iter().enumerate() {
                let idx = batch[k];
                let provenance = self.data.provenance()[idx];
                tally.record(score.subset, provenance);
                if let Some(rows) = dump.as_deref_mut() {
                    rows.push(SelectionRow {
                        epoch,
                        idx,
                        p_clean: score.p_clean,
                        p_ood: score.p_ood,
                        assigned: score.subset,
                        provenance,
                    });
                }
            }
            match outcome.loss {
                Some(l) => {
                    sums[0] += l.l_c;
                    sums[1] += l.l_o;
                    sums[2] += l.l_total;
                    updates += 1;
                }
                None => skipped += 1,
            }
        }
        let mean = |v: f64| (updates > 0).then(|| v / updates as f64);
        Ok(EpochRecord {
            epoch,
            lr,
            tau_clean,
            n_clean: tally.selected(Subset::Clean),
            n_id: tally.selected(Subset::Id),
            n_ood: tally.selected(Subset::Ood),
            precision: tally.precision(),
            loss_c: mean(sums[0]),
            loss_o: mean(sums[1]),
            loss_total: mean(sums[2]),
            test_acc: evaluate(&self.student, test_set)?,
            skipped_batches: skipped,
        })
    }
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub teacher: MeanTeacher,
    pub records: Vec<EpochRecord>,
    pub selection: Vec<SelectionRow>,
}

/// Per-epoch callback receiving `(epoch, student, teacher)`.
pub type EpochHook<'f> = &'f mut dyn FnMut(usize, &MlpModel, &MeanTeacher) -> Result<()>;

/// Options for [`run`] beyond the training configuration.
#[derive(Default)]
pub struct RunOptions<'f> {
    /// Collect a per-sample selection dump for every epoch.
    pub dump_selection: bool,
    /// Called after each epoch with `(epoch, student, teacher)`.
    pub on_epoch: Option<EpochHook<'f>>,
}

/// Trains `method` for `config.t_max` epochs.
pub fn run(
    dataset: &NoisyDataset,
    test_set: &RawDataset,
    config: &TrainConfig,
    method: Method,
    mut options: RunOptions<'_>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config.clone(), method)?;
    let mut records = Vec::with_capacity(config.t_max);
    let mut selection = Vec::new();
    for epoch in 1..=config.t_max {
        let dump = options.dump_selection.then_some(&mut selection);
        records.push(trainer.run_epoch(epoch, test_set, dump)?);
        if let Some(hook) = options.on_epoch.as_mut() {
            hook(epoch, trainer.student(), trainer.teacher())?;
        }
    }
    let (model, teacher) = trainer.into_models();
    Ok(TrainOutcome { model, teacher, records, selection })
}

/// Full noise-robust training.
pub fn train(dataset: &NoisyDataset, test_set: &RawDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    run(dataset, test_set, config, Method::JoSrc(Ablation::Full), RunOptions::default())
}

/// Training with only the stages of `mode` enabled.
pub fn ablation_run(
    dataset: &NoisyDataset,
    test_set: &RawDataset,
    config: &TrainConfig,
    mode: Ablation,
) -> Result<Vec<EpochRecord>> {
    Ok(run(dataset, test_set, config, Method::JoSrc(mode), RunOptions::default())?.records)
}

/// Mean and population standard deviation of test accuracy over the last
/// `window` epochs.
pub fn final_accuracy(records: &[EpochRecord], window: usize) -> Option<(f64, f64)> {
    if records.is_empty() || window == 0 {
        return None;
    }
    let tail = &records[records.len().saturating_sub(window)..];
    Some(mean_std(tail.iter().map(|r| r.test_acc)))
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const METRICS_HEADER: [&str; 13] = [
    "epoch",
    "lr",
    "tau_clean",
    "n_clean",
    "n_id",
    "n_ood",
    "prec_clean",
    "prec_id",
    "prec_ood",
    "loss_c",
    "loss_o",
    "loss_total",
    "test_acc",
];

pub const SELECTION_HEADER: [&str; 6] = ["epoch", "idx", "p_clean", "p_ood", "assigned", "provenance"];

/// Marker for absent values in CSV output.
pub const ABSENT: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |x| x.to_string())
}

fn lf_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn write_metrics_csv<W: Write>(records: &[EpochRecord], out: W) -> Result<()> {
    let mut w = lf_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.tau_clean.to_string(),
            r.n_clean.to_string(),
            r.n_id.to_string(),
            r.n_ood.to_string(),
            opt(r.precision.clean),
            opt(r.precision.id),
            opt(r.precision.ood),
            opt(r.loss_c),
            opt(r.loss_o),
            opt(r.loss_total),
            r.test_acc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_selection_csv<W: Write>(rows: &[SelectionRow], out: W) -> Result<()> {
    let mut w = lf_writer(out);
    w.write_record(SELECTION_HEADER)?;
    for r in rows {
        let num = |v: f64| if v.is_nan() { ABSENT.to_string() } else { v.to_string() };
        w.write_record([
            r.epoch.to_string(),
            r.idx.to_string(),
            num(r.p_clean),
            num(r.p_ood),
            r.assigned.as_str().to_string(),
            r.provenance.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
