//! Runs every arm of an experiment and writes its artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! <arm>/seed-<seed>/metrics.csv
//! <arm>/seed-<seed>/selection.csv          (selection_dump = true)
//! <arm>/seed-<seed>/epoch-<e>.ckpt         (checkpoint_every = k)
//! <arm>/seed-<seed>/epoch-<e>.teacher.ckpt
//! <arm>/seed-<seed>/final.ckpt
//! <arm>/seed-<seed>/final.teacher.ckpt
//! runs.csv
//! summary.csv
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use josrc::datagen::{read_dataset_csv, write_dataset_csv, NoisyDataset, Provenance, RawDataset};
use josrc::nn::{load_checkpoint, save_checkpoint, MlpModel};
use josrc::relabel::MeanTeacher;
use josrc::trainer::{
    evaluate, final_accuracy, mean_std, run, write_metrics_csv, write_selection_csv, Method, RunOptions, TrainConfig,
    FINAL_WINDOW,
};
use rayon::prelude::*;

use crate::config::{DatasetSource, ExperimentSpec};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "JOSRC_THREADS";

pub const RUNS_HEADER: &str = "arm,seed,status,final_acc_mean,final_acc_std";
pub const SUMMARY_HEADER: &str = "arm,runs,completed,final_acc_mean,final_acc_std";

/// Outcome of one arm at one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub arm: Method,
    pub seed: u64,
    /// Mean and population std of test accuracy over the final epochs, or the
    /// failure message.
    pub outcome: Result<(f64, f64), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub out_dir: PathBuf,
}

impl ExperimentReport {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.outcome.is_ok())
    }
}

/// Thread cap from `JOSRC_THREADS`, if set to a positive integer.
pub fn thread_limit_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => bail!("{THREADS_ENV} must be a positive integer, got {v:?}"),
        },
    }
}

fn in_distribution(data: &NoisyDataset) -> anyhow::Result<RawDataset> {
    let classes = data.class_count();
    let keep: Vec<usize> = (0..data.len()).filter(|&i| data.true_labels()[i] < classes).collect();
    if keep.is_empty() {
        bail!("test data has no in-distribution samples");
    }
    let features = keep.iter().flat_map(|&i| data.features(i).iter().copied()).collect();
    let labels = keep.iter().map(|&i| data.true_labels()[i]).collect();
    Ok(RawDataset::new(features, data.dim(), labels, classes)?)
}

fn read_csv(path: &Path, class_count: Option<usize>) -> anyhow::Result<NoisyDataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset_csv(file, class_count).with_context(|| format!("reading {}", path.display()))
}

/// Training set and in-distribution test set for one seed.
pub fn load_data(spec: &ExperimentSpec, seed: u64) -> anyhow::Result<(NoisyDataset, RawDataset)> {
    match &spec.dataset {
        DatasetSource::Blobs(setup) => Ok(setup.build(&spec.noise, seed)?),
        DatasetSource::Csv { train, test, class_count } => {
            let train = read_csv(train, *class_count)?;
            let test = read_csv(test, Some(train.class_count()))?;
            if test.dim() != train.dim() {
                bail!("train and test features differ in dimension");
            }
            Ok((train, in_distribution(&test)?))
        }
    }
}

fn run_dir(out: &Path, arm: Method, seed: u64) -> PathBuf {
    out.join(arm.name()).join(format!("seed-{seed}"))
}

fn save_pair(dir: &Path, stem: &str, student: &MlpModel, teacher: &MeanTeacher) -> josrc::Result<()> {
    save_checkpoint(student, dir.join(format!("{stem}.ckpt")))?;
    save_checkpoint(teacher.params(), dir.join(format!("{stem}.teacher.ckpt")))
}

fn run_arm(spec: &ExperimentSpec, arm: Method, seed: u64) -> anyhow::Result<(f64, f64)> {
    let (train, test) = load_data(spec, seed)?;
    let dir = run_dir(&spec.out_dir, arm, seed);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let config = TrainConfig { seed, ..spec.train.clone() };

    let every = spec.checkpoint_every;
    let mut hook = |epoch: usize, student: &MlpModel, teacher: &MeanTeacher| -> josrc::Result<()> {
        if every > 0 && epoch.is_multiple_of(every) {
            save_pair(&dir, &format!("epoch-{epoch}"), student, teacher)?;
        }
        Ok(())
    };
    let options = RunOptions { dump_selection: spec.selection_dump, on_epoch: Some(&mut hook) };
    let out = run(&train, &test, &config, arm, options)?;

    write_metrics_csv(&out.records, BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
    if spec.selection_dump {
        write_selection_csv(&out.selection, BufWriter::new(File::create(dir.join("selection.csv"))?))?;
    }
    save_pair(&dir, "final", &out.model, &out.teacher)?;
    final_accuracy(&out.records, FINAL_WINDOW).context("no epochs recorded")
}

fn write_reports(spec: &ExperimentSpec, runs: &[RunResult]) -> anyhow::Result<()> {
    let mut w =
        csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(spec.out_dir.join("runs.csv"))?;
    w.write_record(RUNS_HEADER.split(','))?;
    for r in runs {
        let (status, mean, std) = match &r.outcome {
            Ok((m, s)) => ("ok".to_string(), m.to_string(), s.to_string()),
            Err(e) => (format!("failed: {e}"), "NA".into(), "NA".into()),
        };
        w.write_record([r.arm.name().to_string(), r.seed.to_string(), status, mean, std])?;
    }
    w.flush()?;

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(spec.out_dir.join("summary.csv"))?;
    w.write_record(SUMMARY_HEADER.split(','))?;
    for &arm in &spec.arms {
        let arm_runs: Vec<&RunResult> = runs.iter().filter(|r| r.arm == arm).collect();
        let done: Vec<(f64, f64)> = arm_runs.iter().filter_map(|r| r.outcome.clone().ok()).collect();
        let (mean, std) = match done.len() {
            0 => ("NA".to_string(), "NA".to_string()),
            // One run: spread over the final-epoch window.
            1 => (done[0].0.to_string(), done[0].1.to_string()),
            // Several seeds: spread of the per-seed final means.
            _ => {
                let (m, s) = mean_std(done.iter().map(|d| d.0));
                (m.to_string(), s.to_string())
            }
        };
        w.write_record([arm.name().to_string(), arm_runs.len().to_string(), done.len().to_string(), mean, std])?;
    }
    w.flush()?;
    Ok(())
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}

/// Runs every arm for every seed, concurrently up to `threads` workers.
/// Individual arm failures are recorded in the report rather than returned.
pub fn run_experiment(spec: &ExperimentSpec, threads: Option<usize>) -> anyhow::Result<ExperimentReport> {
    fs::create_dir_all(&spec.out_dir).with_context(|| format!("creating {}", spec.out_dir.display()))?;
    let jobs: Vec<(Method, u64)> = spec.arms.iter().flat_map(|&a| spec.seeds().map(move |s| (a, s))).collect();
    let runs: Vec<RunResult> = with_pool(threads, || {
        jobs.par_iter()
            .map(|&(arm, seed)| RunResult {
                arm,
                seed,
                outcome: run_arm(spec, arm, seed).map_err(|e| format!("{e:#}")),
            })
            .collect()
    })?;
    write_reports(spec, &runs)?;
    Ok(ExperimentReport { runs, out_dir: spec.out_dir.clone() })
}

/// Writes the generated train and test sets of every seed as dataset CSVs
/// under `<out_dir>/data/`. Returns the written paths.
pub fn generate_data(spec: &ExperimentSpec) -> anyhow::Result<Vec<PathBuf>> {
    if !matches!(spec.dataset, DatasetSource::Blobs(_)) {
        bail!("gen-data needs a generated dataset; this config reads CSV files");
    }
    let dir = spec.out_dir.join("data");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for seed in spec.seeds() {
        let (train, test) = load_data(spec, seed)?;
        let n = test.len();
        let test = NoisyDataset::new(
            (0..n).flat_map(|i| test.features(i).to_vec()).collect(),
            test.dim(),
            test.labels().to_vec(),
            test.labels().to_vec(),
            vec![Provenance::Clean; n],
            test.class_count(),
        )?;
        for (tag, data) in [("train", &train), ("test", &test)] {
            let path = dir.join(format!("{tag}-seed-{seed}.csv"));
            write_dataset_csv(data, BufWriter::new(File::create(&path)?))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub samples: usize,
}

/// Accuracy of a checkpoint against the true labels of a dataset CSV.
/// Samples from classes the model does not predict are skipped.
pub fn evaluate_checkpoint(checkpoint: &Path, data: &Path) -> anyhow::Result<EvalResult> {
    let model = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let data = read_csv(data, Some(model.class_count()))?;
    if data.dim() != model.input_dim() {
        bail!("data has {} features, model expects {}", data.dim(), model.input_dim());
    }
    let test = in_distribution(&data)?;
    Ok(EvalResult { accuracy: evaluate(&model, &test)?, samples: test.len() })
}
