//! `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use josrc::datagen::{BlobSetup, NoiseSpec, NoiseType};
use josrc::selection::CleanView;
use josrc::trainer::{Ablation, Method, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("{0}")]
    Invalid(String),
}

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Generated blobs, corrupted by the experiment's noise spec.
    Blobs(BlobSetup),
    /// Dataset CSVs as written by `gen-data`; `class_count` is the number of
    /// in-distribution classes.
    Csv { train: PathBuf, test: PathBuf, class_count: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSource,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub arms: Vec<Method>,
    pub out_dir: PathBuf,
    /// Number of seeds, starting at `train.seed`.
    pub repeats: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub selection_dump: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: DatasetSource::Blobs(BlobSetup::default()),
            noise: NoiseSpec {
                noise_type: NoiseType::Symmetry,
                closed_set_ratio: 0.5,
                open_set: true,
                ood_class_count: 2,
            },
            train: TrainConfig::default(),
            arms: vec![Method::JoSrc(Ablation::Full)],
            out_dir: PathBuf::from("josrc-out"),
            repeats: 1,
            checkpoint_every: 0,
            selection_dump: false,
        }
    }
}

impl ExperimentSpec {
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeats as u64).map(|k| self.train.seed + k)
    }

    /// Classes the model predicts.
    pub fn class_count(&self) -> Option<usize> {
        match &self.dataset {
            DatasetSource::Blobs(b) if self.noise.open_set => Some(b.class_count - self.noise.ood_class_count),
            DatasetSource::Blobs(b) => Some(b.class_count),
            DatasetSource::Csv { class_count, .. } => *class_count,
        }
    }
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    parse_config(&text)
}

#[derive(Clone, Copy)]
enum Bound {
    Open(f64),
    Closed(f64),
    Unbounded,
}

fn range_label(lo: Bound, hi: Bound) -> String {
    let left = match lo {
        Bound::Open(v) => format!("({v}"),
        Bound::Closed(v) => format!("[{v}"),
        Bound::Unbounded => "(-inf".into(),
    };
    let right = match hi {
        Bound::Open(v) => format!("{v})"),
        Bound::Closed(v) => format!("{v}]"),
        Bound::Unbounded => "inf)".into(),
    };
    format!("{left},{right}")
}

fn check_range(key: &str, v: f64, lo: Bound, hi: Bound) -> Result<f64, ConfigError> {
    let lo_ok = match lo {
        Bound::Open(b) => v > b,
        Bound::Closed(b) => v >= b,
        Bound::Unbounded => true,
    };
    let hi_ok = match hi {
        Bound::Open(b) => v < b,
        Bound::Closed(b) => v <= b,
        Bound::Unbounded => v.is_finite(),
    };
    if lo_ok && hi_ok && !v.is_nan() {
        Ok(v)
    } else {
        Err(ConfigError::Invalid(format!("{key} out of {} (got {v})", range_label(lo, hi))))
    }
}

const UNIT_CLOSED: (Bound, Bound) = (Bound::Closed(0.0), Bound::Closed(1.0));
const UNIT_OPEN: (Bound, Bound) = (Bound::Open(0.0), Bound::Open(1.0));
const UNIT_HALF_OPEN: (Bound, Bound) = (Bound::Closed(0.0), Bound::Open(1.0));
const POSITIVE: (Bound, Bound) = (Bound::Open(0.0), Bound::Unbounded);
const NON_NEGATIVE: (Bound, Bound) = (Bound::Closed(0.0), Bound::Unbounded);

fn real_range(key: &str) -> Option<(Bound, Bound)> {
    Some(match key {
        "omega" | "alpha" => UNIT_CLOSED,
        "epsilon" | "rho_aug" | "drop_rate" => UNIT_HALF_OPEN,
        "tau_c" | "tau_ood" | "delta_js" | "n_c" => UNIT_OPEN,
        "tau_m" => (Bound::Open(0.0), Bound::Closed(1.0)),
        "s" | "base_lr" | "spread" => POSITIVE,
        "sigma_aug" => NON_NEGATIVE,
        _ => return None,
    })
}

const INTEGER_KEYS: &[&str] = &[
    "t_max",
    "t_w",
    "batch_size",
    "decay_start_epoch",
    "seed",
    "repeats",
    "checkpoint_every",
    "classes",
    "per_class",
    "test_per_class",
    "dim",
    "ood_classes",
    "class_count",
];

const OTHER_KEYS: &[&str] = &[
    "name",
    "arms",
    "out_dir",
    "hidden",
    "noise_type",
    "open_set",
    "clean_view",
    "selection_dump",
    "train_data",
    "test_data",
];

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Invalid(format!("{key} must be true or false, got {v:?}"))),
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are ignored.
/// Absent keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: line_no,
            message: format!("expected `key = value`, found {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Parse { line: line_no, message: format!("bad key {key:?}") });
        }
        if value.is_empty() {
            return Err(ConfigError::Parse { line: line_no, message: format!("missing value for {key}") });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Parse { line: line_no, message: format!("duplicate key {key}") });
        }
        entries.push((line_no, key.to_string(), value.to_string()));
    }

    let unknown: Vec<String> = entries
        .iter()
        .map(|(_, k, _)| k)
        .filter(|k| real_range(k).is_none() && !INTEGER_KEYS.contains(&k.as_str()) && !OTHER_KEYS.contains(&k.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }

    let mut spec = ExperimentSpec::default();
    let mut blobs = BlobSetup::default();
    let mut train_path = None;
    let mut test_path = None;
    let mut csv_classes = None;
    for (line, key, value) in &entries {
        let parse_err = |what: &str| ConfigError::Parse {
            line: *line,
            message: format!("{key}: expected {what}, found {value:?}"),
        };
        if let Some((lo, hi)) = real_range(key) {
            let v: f64 = value.parse().map_err(|_| parse_err("a number"))?;
            let v = check_range(key, v, lo, hi)?;
            let t = &mut spec.train;
            match key.as_str() {
                "omega" => t.omega = v,
                "alpha" => t.alpha = v,
                "n_c" => spec.noise.closed_set_ratio = v,
                "epsilon" => t.epsilon = v,
                "rho_aug" => t.rho_aug = v,
                "drop_rate" => t.drop_rate = v,
                "tau_c" => t.tau_c = v,
                "tau_ood" => t.tau_ood = v,
                "delta_js" => t.delta_js = v,
                "tau_m" => t.tau_m = v,
                "s" => t.s = v,
                "base_lr" => t.base_lr = v,
                "spread" => blobs.spread = v,
                "sigma_aug" => t.sigma_aug = v,
                _ => unreachable!("range table and setters disagree on {key}"),
            }
            continue;
        }
        if INTEGER_KEYS.contains(&key.as_str()) {
            let v: u64 = value.parse().map_err(|_| parse_err("a non-negative integer"))?;
            let u = v as usize;
            match key.as_str() {
                "t_max" => spec.train.t_max = u,
                "t_w" => spec.train.t_w = u,
                "batch_size" => spec.train.batch_size = u,
                "decay_start_epoch" => spec.train.decay_start_epoch = u,
                "seed" => spec.train.seed = v,
                "repeats" => spec.repeats = u,
                "checkpoint_every" => spec.checkpoint_every = u,
                "classes" => blobs.class_count = u,
                "per_class" => blobs.per_class = u,
                "test_per_class" => blobs.test_per_class = u,
                "dim" => blobs.dim = u,
                "ood_classes" => spec.noise.ood_class_count = u,
                "class_count" => csv_classes = Some(u),
                _ => unreachable!("integer key table and setters disagree on {key}"),
            }
            continue;
        }
        match key.as_str() {
            "name" => spec.name = value.clone(),
            "out_dir" => spec.out_dir = PathBuf::from(value),
            "train_data" => train_path = Some(PathBuf::from(value)),
            "test_data" => test_path = Some(PathBuf::from(value)),
            "open_set" => spec.noise.open_set = parse_bool(key, value)?,
            "selection_dump" => spec.selection_dump = parse_bool(key, value)?,
            "noise_type" => {
                spec.noise.noise_type = match value.as_str() {
                    "symmetry" => NoiseType::Symmetry,
                    "asymmetry" => NoiseType::Asymmetry,
                    _ => return Err(parse_err("symmetry or asymmetry")),
                }
            }
            "clean_view" => {
                spec.train.clean_view = match value.as_str() {
                    "first" => CleanView::First,
                    "mean" => CleanView::Mean,
                    _ => return Err(parse_err("first or mean")),
                }
            }
            "hidden" => {
                spec.train.hidden = value
                    .split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| parse_err("comma-separated layer widths"))?;
            }
            "arms" => {
                let mut arms = Vec::new();
                for name in value.split(',').map(str::trim) {
                    let arm = Method::parse(name).ok_or_else(|| ConfigError::Parse {
                        line: *line,
                        message: format!(
                            "unknown arm {name:?}; expected standard, josrc, ablation-C, ablation-CI, \
                             ablation-CIO or smallloss-baseline"
                        ),
                    })?;
                    if !arms.contains(&arm) {
                        arms.push(arm);
                    }
                }
                spec.arms = arms;
            }
            _ => unreachable!("key table and setters disagree on {key}"),
        }
    }

    spec.dataset = match (train_path, test_path) {
        (None, None) => DatasetSource::Blobs(blobs),
        (Some(train), Some(test)) => DatasetSource::Csv { train, test, class_count: csv_classes },
        _ => return Err(ConfigError::Invalid("train_data and test_data must be given together".into())),
    };
    validate(&spec)?;
    Ok(spec)
}

fn validate(spec: &ExperimentSpec) -> Result<(), ConfigError> {
    let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
    if spec.arms.is_empty() {
        return invalid("at least one arm is required");
    }
    if spec.repeats == 0 {
        return invalid("repeats must be at least 1");
    }
    if spec.name.contains(['/', '\\']) {
        return invalid("name must not contain path separators");
    }
    if let DatasetSource::Blobs(b) = &spec.dataset {
        if b.per_class == 0 || b.test_per_class == 0 || b.dim == 0 {
            return invalid("per_class, test_per_class and dim must be positive");
        }
        spec.noise.validate(b.class_count).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    spec.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
}
