//! Synthetic Gaussian-blob datasets, label-noise injection and two-view
//! augmentation.
//!
//! Closed-set noise corrupts an exact number of labels, either uniformly over
//! the other classes (`Symmetry`) or by a circular next-class flip
//! (`Asymmetry`). Open-set noise additionally reserves the last classes as
//! out-of-distribution: their samples keep their features but receive a
//! uniformly drawn in-distribution label.

use std::io::{Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Distance of every class mean from the origin.
pub const MEAN_RADIUS: f64 = 2.0;

// Layout seed for class means when there are more classes than signed axes.
const MEAN_LAYOUT_SEED: u64 = 0x6a6f_7372_635f_6d75;

/// Clean features with ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    features: Vec<f64>,
    dim: usize,
    true_labels: Vec<usize>,
    class_count: usize,
}

impl RawDataset {
    pub fn new(features: Vec<f64>, dim: usize, true_labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if dim == 0 || true_labels.is_empty() {
            return Err(invalid("dataset needs at least one sample and one feature"));
        }
        if features.len() != dim * true_labels.len() {
            return Err(invalid(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                true_labels.len()
            )));
        }
        if let Some(l) = true_labels.iter().find(|&&l| l >= class_count) {
            return Err(invalid(format!("label {l} outside {class_count} classes")));
        }
        Ok(Self { features, dim, true_labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.true_labels
    }

    /// Keeps only samples whose label is below `classes`; used to build
    /// in-distribution test sets.
    pub fn in_distribution(&self, classes: usize) -> Result<RawDataset> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.true_labels[i] < classes).collect();
        if keep.is_empty() {
            return Err(invalid("no in-distribution samples"));
        }
        let features = keep.iter().flat_map(|&i| self.features(i).iter().copied()).collect();
        let labels = keep.iter().map(|&i| self.true_labels[i]).collect();
        RawDataset::new(features, self.dim, labels, classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseType {
    Symmetry,
    Asymmetry,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub noise_type: NoiseType,
    pub closed_set_ratio: f64,
    pub open_set: bool,
    pub ood_class_count: usize,
}

impl NoiseSpec {
    pub fn validate(&self, total_classes: usize) -> Result<()> {
        if !(self.closed_set_ratio > 0.0 && self.closed_set_ratio < 1.0) {
            return Err(invalid(format!("n_c {} out of (0,1)", self.closed_set_ratio)));
        }
        if self.open_set && (self.ood_class_count == 0 || self.ood_class_count + 2 > total_classes) {
            return Err(invalid(format!(
                "ood_class_count {} must be in [1, {}] to leave two in-distribution classes",
                self.ood_class_count,
                total_classes.saturating_sub(2)
            )));
        }
        Ok(())
    }
}

/// Hidden origin of a training sample's label. Only evaluation looks at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Clean,
    IdNoisy,
    OodNoisy,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Clean => "clean",
            Provenance::IdNoisy => "id",
            Provenance::OodNoisy => "ood",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(Provenance::Clean),
            "id" => Some(Provenance::IdNoisy),
            "ood" => Some(Provenance::OodNoisy),
            _ => None,
        }
    }
}

/// Training set with given (possibly corrupted) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    features: Vec<f64>,
    dim: usize,
    given_labels: Vec<usize>,
    true_labels: Vec<usize>,
    provenance: Vec<Provenance>,
    class_count: usize,
}

impl NoisyDataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        given_labels: Vec<usize>,
        true_labels: Vec<usize>,
        provenance: Vec<Provenance>,
        class_count: usize,
    ) -> Result<Self> {
        let n = given_labels.len();
        if n == 0 || dim == 0 {
            return Err(invalid("dataset needs at least one sample and one feature"));
        }
        if features.len() != n * dim || true_labels.len() != n || provenance.len() != n {
            return Err(invalid("feature, label and provenance columns have different lengths"));
        }
        if class_count < 2 {
            return Err(invalid("need at least two in-distribution classes"));
        }
        if let Some(l) = given_labels.iter().find(|&&l| l >= class_count) {
            return Err(invalid(format!("given label {l} outside {class_count} classes")));
        }
        Ok(Self { features, dim, given_labels, true_labels, provenance, class_count })
    }

    pub fn len(&self) -> usize {
        self.given_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// In-distribution class count `C`.
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given_labels
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn count(&self, tag: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == tag).count()
    }

    /// Fraction of samples whose given label is not their clean label.
    pub fn noisy_fraction(&self) -> f64 {
        (self.len() - self.count(Provenance::Clean)) as f64 / self.len() as f64
    }
}

/// Two stochastic views of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub v: Vec<f64>,
    pub v_prime: Vec<f64>,
    pub source_index: usize,
}

/// Gaussian jitter followed by coordinate dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub sigma: f64,
    pub dropout: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { sigma: 0.1, dropout: 0.1 }
    }
}

fn class_means(class_count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut layout = ChaCha8Rng::seed_from_u64(MEAN_LAYOUT_SEED);
    (0..class_count)
        .map(|c| {
            let mut mean = vec![0.0; dim];
            if c < 2 * dim {
                mean[c % dim] = if c < dim { MEAN_RADIUS } else { -MEAN_RADIUS };
            } else {
                let dir: Vec<f64> = (0..dim).map(|_| layout.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                for (m, d) in mean.iter_mut().zip(dir) {
                    *m = MEAN_RADIUS * d / norm;
                }
            }
            mean
        })
        .collect()
}

/// Isotropic Gaussian blobs with `per_class` samples per class, class-major
/// order. Means sit at `±MEAN_RADIUS` along the coordinate axes (class `c`
/// uses `+e_c`, then `-e_{c-dim}`), with seeded random directions beyond
/// `2 * dim` classes. Means do not depend on `seed`, so train and test sets
/// drawn with different seeds share the same classes.
pub fn make_blobs(class_count: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<RawDataset> {
    if class_count == 0 || per_class == 0 || dim == 0 {
        return Err(invalid("class_count, per_class and dim must be positive"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(invalid(format!("spread {spread} must be finite and non-negative")));
    }
    let means = class_means(class_count, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = class_count * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for m in mean {
                let z: f64 = rng.sample(StandardNormal);
                features.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    RawDataset::new(features, dim, labels, class_count)
}

fn corrupt_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

fn check_ratio(n_c: f64) -> Result<()> {
    if n_c > 0.0 && n_c < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("n_c {n_c} out of (0,1)")))
    }
}

/// Corrupts exactly `round(n_c * N)` of the labels listed in `pool`
/// (indices into `given`), writing the new labels and tags in place.
fn corrupt_pool(
    given: &mut [usize],
    provenance: &mut [Provenance],
    pool: &[usize],
    classes: usize,
    noise: NoiseType,
    n_c: f64,
    rng: &mut ChaCha8Rng,
) {
    let k = corrupt_count(n_c, pool.len());
    let mut chosen = index::sample(rng, pool.len(), k).into_vec();
    chosen.sort_unstable();
    for j in chosen {
        let i = pool[j];
        let truth = given[i];
        given[i] = match noise {
            NoiseType::Symmetry => {
                let r = rng.random_range(0..classes - 1);
                if r >= truth {
                    r + 1
                } else {
                    r
                }
            }
            NoiseType::Asymmetry => (truth + 1) % classes,
        };
        provenance[i] = Provenance::IdNoisy;
    }
}

fn corrupt_closed(raw: &RawDataset, noise: NoiseType, n_c: f64, seed: u64) -> Result<NoisyDataset> {
    check_ratio(n_c)?;
    let classes = raw.class_count();
    if classes < 2 {
        return Err(invalid("label corruption needs at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut given = raw.labels().to_vec();
    let mut provenance = vec![Provenance::Clean; raw.len()];
    let pool: Vec<usize> = (0..raw.len()).collect();
    corrupt_pool(&mut given, &mut provenance, &pool, classes, noise, n_c, &mut rng);
    NoisyDataset::new(raw.features.clone(), raw.dim, given, raw.labels().to_vec(), provenance, classes)
}

/// Resamples `round(n_c * N)` uniformly chosen labels uniformly from the
/// other `C - 1` classes.
pub fn corrupt_symmetric(raw: &RawDataset, n_c: f64, seed: u64) -> Result<NoisyDataset> {
    corrupt_closed(raw, NoiseType::Symmetry, n_c, seed)
}

/// Flips `round(n_c * N)` uniformly chosen labels to `(label + 1) mod C`.
pub fn corrupt_asymmetric(raw: &RawDataset, n_c: f64, seed: u64) -> Result<NoisyDataset> {
    corrupt_closed(raw, NoiseType::Asymmetry, n_c, seed)
}

/// Open-set construction: the last `ood_class_count` classes become OOD
/// noise with uniform in-distribution labels, and `n_c` of the remaining
/// samples are corrupted in the closed-set fashion of `spec.noise_type`.
pub fn make_open_set(raw: &RawDataset, spec: &NoiseSpec, seed: u64) -> Result<NoisyDataset> {
    if !spec.open_set {
        return Err(invalid("make_open_set called with a closed-set noise spec"));
    }
    spec.validate(raw.class_count())?;
    let classes = raw.class_count() - spec.ood_class_count;
    if classes < 2 {
        return Err(invalid("open-set split leaves fewer than two in-distribution classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut given = raw.labels().to_vec();
    let mut provenance = vec![Provenance::Clean; raw.len()];
    let mut pool = Vec::new();
    for i in 0..raw.len() {
        if raw.labels()[i] >= classes {
            given[i] = rng.random_range(0..classes);
            provenance[i] = Provenance::OodNoisy;
        } else {
            pool.push(i);
        }
    }
    corrupt_pool(&mut given, &mut provenance, &pool, classes, spec.noise_type, spec.closed_set_ratio, &mut rng);
    NoisyDataset::new(raw.features.clone(), raw.dim, given, raw.labels().to_vec(), provenance, classes)
}

/// Applies `spec` to `raw`, dispatching on open/closed set and noise type.
pub fn make_noisy(raw: &RawDataset, spec: &NoiseSpec, seed: u64) -> Result<NoisyDataset> {
    if spec.open_set {
        make_open_set(raw, spec, seed)
    } else {
        corrupt_closed(raw, spec.noise_type, spec.closed_set_ratio, seed)
    }
}

/// Blob train/test pair for noisy-label experiments. Distinct seeds use
/// disjoint random streams for the training features, the corruption and the
/// test features. The test set keeps true labels and drops OOD classes.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSetup {
    pub class_count: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
}

impl Default for BlobSetup {
    fn default() -> Self {
        Self { class_count: 10, per_class: 100, test_per_class: 200, dim: 8, spread: 0.7 }
    }
}

impl BlobSetup {
    pub fn build(&self, noise: &NoiseSpec, seed: u64) -> Result<(NoisyDataset, RawDataset)> {
        let base = seed.wrapping_mul(3);
        let raw = make_blobs(self.class_count, self.per_class, self.dim, self.spread, base)?;
        let train = make_noisy(&raw, noise, base.wrapping_add(1))?;
        let test = make_blobs(self.class_count, self.test_per_class, self.dim, self.spread, base.wrapping_add(2))?
            .in_distribution(train.class_count())?;
        Ok((train, test))
    }
}

fn perturb<R: Rng + ?Sized>(x: &[f64], aug: &Augmentation, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&xj| {
            let z: f64 = rng.sample(StandardNormal);
            let keep = rng.random::<f64>() >= aug.dropout;
            if keep {
                xj + aug.sigma * z
            } else {
                0.0
            }
        })
        .collect()
}

/// Draws two independent augmented views of `x`. Each view has expectation
/// `(1 - dropout) * x`.
pub fn augment<R: Rng + ?Sized>(x: &[f64], source_index: usize, aug: &Augmentation, rng: &mut R) -> ViewPair {
    let v = perturb(x, aug, rng);
    let v_prime = perturb(x, aug, rng);
    ViewPair { v, v_prime, source_index }
}

/// Writes `idx,feat_0..feat_{D-1},given_label,true_label,provenance`.
pub fn write_dataset_csv<W: Write>(data: &NoisyDataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["idx".to_string()];
    header.extend((0..data.dim()).map(|j| format!("feat_{j}")));
    header.extend(["given_label", "true_label", "provenance"].map(String::from));
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row = vec![i.to_string()];
        row.extend(data.features(i).iter().map(|v| v.to_string()));
        row.push(data.given_labels()[i].to_string());
        row.push(data.true_labels()[i].to_string());
        row.push(data.provenance()[i].as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the dataset CSV. `class_count` defaults to the largest given label
/// plus one.
pub fn read_dataset_csv<R: Read>(input: R, class_count: Option<usize>) -> Result<NoisyDataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 5 || &header[0] != "idx" || &header[cols - 3] != "given_label" {
        return Err(Error::Format("unexpected dataset header".into()));
    }
    let dim = cols - 4;
    for (j, name) in header.iter().skip(1).take(dim).enumerate() {
        if name != format!("feat_{j}") {
            return Err(Error::Format(format!("column {} should be feat_{j}, found {name}", j + 1)));
        }
    }
    let mut features = Vec::new();
    let mut given = Vec::new();
    let mut truth = Vec::new();
    let mut provenance = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("row {}: bad {what}", row + 1));
        for j in 0..dim {
            features.push(rec[j + 1].parse::<f64>().map_err(|_| bad("feature"))?);
        }
        given.push(rec[dim + 1].parse::<usize>().map_err(|_| bad("given_label"))?);
        truth.push(rec[dim + 2].parse::<usize>().map_err(|_| bad("true_label"))?);
        provenance.push(Provenance::parse(&rec[dim + 3]).ok_or_else(|| bad("provenance"))?);
    }
    let classes = class_count.unwrap_or_else(|| given.iter().max().map_or(0, |m| m + 1));
    NoisyDataset::new(features, dim, given, truth, provenance, classes)
}
