//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use josrc::datagen::{BlobSetup, NoiseSpec, NoiseType};
use josrc::nn::save_checkpoint;
use josrc::relabel::{ema_update, flatten, smooth_label, teacher_label_ood, MeanTeacher};
use josrc::selection::{dynamic_threshold, js_divergence, partition_batch, small_loss_select, ThresholdSchedule};
use josrc::trainer::{
    final_accuracy, mean_std, run, write_metrics_csv, Ablation, EpochRecord, Method, RunOptions, TrainConfig,
};
use josrc::ProbDist;
use rand::Rng;
use rayon::prelude::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const NOISE_LEVELS: [f64; 3] = [0.2, 0.5, 0.8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn js_suite() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let pairs = 20_000;
    let mut worst_oracle: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..pairs {
        let c = r.random_range(2..16);
        let p = random_dist(&mut r, c);
        let q = random_dist(&mut r, c);
        let d = js_divergence(&p, &q).unwrap();
        let ok = (0.0..=1.0).contains(&d)
            && (d - js_divergence(&q, &p).unwrap()).abs() < 1e-12
            && js_divergence(&p, &p).unwrap().abs() < 1e-12;
        if !ok {
            failures += 1;
        }
        worst_oracle = worst_oracle.max((d - js_oracle(p.as_slice(), q.as_slice()).clamp(0.0, 1.0)).abs());
    }
    let one_hot = ProbDist::new(vec![1.0, 0.0]).unwrap();
    let value = js_divergence(&one_hot, &ProbDist::uniform(2)).unwrap();
    let oracle = js_two_class_onehot_uniform();
    let elapsed = start.elapsed();
    let pass = failures == 0 && (value - oracle).abs() <= 1e-9 && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "{pairs} pairs, {failures} property failures, max oracle gap {worst_oracle:.1e}, \
             two-class value {value:.6} vs oracle {oracle:.6}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut r = rng(202);
    let alphas = [0.0, 0.5, 1.0];
    let mut worst: f64 = 0.0;
    let mut covered = [[false; 2]; 3];
    let problems = 150;
    for i in 0..problems {
        let (model, pairs, targets, mut signs) = random_problem(&mut r);
        let a = i % 3;
        let sign_slot = (i / 3) % 2;
        signs[0] = if sign_slot == 0 { 1.0 } else { -1.0 };
        for s in &signs {
            covered[a][usize::from(*s < 0.0)] = true;
        }
        worst = worst.max(gradient_relative_error(&model, &pairs, &targets, &signs, alphas[a]));
    }
    let elapsed = start.elapsed();
    let all_covered = covered.iter().flatten().all(|c| *c);
    let pass = worst <= 1e-5 && all_covered && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{problems} models, alpha in {{0,0.5,1}} x both signs covered: {all_covered}, \
             max relative error {worst:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_oracle() -> Outcome {
    let mut r = rng(303);
    let batches = 2_000;
    let mut mismatches = 0;
    let mut samples = 0;
    let mut seen = [0usize; 3];
    for _ in 0..batches {
        let c = r.random_range(2..10);
        let n = r.random_range(1..65);
        let delta = r.random_range(1e-6..0.9);
        let tau_clean = r.random_range(0.0..1.0);
        let mut p = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a = random_dist(&mut r, c);
            let b = if r.random_bool(0.5) { a.clone() } else { random_dist(&mut r, c) };
            p.push(a);
            q.push(b);
            y.push(smooth_label(r.random_range(0..c), c, delta).unwrap());
        }
        let part = partition_batch(&p, &q, &y, tau_clean, 0.5).unwrap();
        let got = part.assignments().unwrap();
        for k in 0..n {
            let want = brute_force_subset(p[k].as_slice(), q[k].as_slice(), y[k].as_slice(), tau_clean, 0.5);
            let have = match got[k] {
                josrc::selection::Subset::Clean => 0,
                josrc::selection::Subset::Id => 1,
                josrc::selection::Subset::Ood => 2,
            };
            seen[usize::from(want)] += 1;
            if have != want {
                mismatches += 1;
            }
            samples += 1;
        }
    }
    let pass = mismatches == 0 && seen.iter().all(|&s| s > 0);
    outcome(
        pass,
        format!(
            "{batches} batches, {samples} samples (clean/id/ood {}/{}/{}), {mismatches} mismatches",
            seen[0], seen[1], seen[2]
        ),
    )
}

/// Prediction for a sample whose given label is `label`: confident on it when
/// the label is right, confident elsewhere when it is noisy.
fn simulated_prediction<R: Rng>(r: &mut R, label: usize, noisy: bool, classes: usize) -> ProbDist {
    let peak = if noisy { (label + r.random_range(1..classes)) % classes } else { label };
    let strength = r.random_range(2.0..6.0);
    let logits: Vec<f64> =
        (0..classes).map(|k| if k == peak { strength } else { 0.0 } + r.random_range(-0.5..0.5)).collect();
    ProbDist::softmax(&logits)
}

fn global_invariance() -> Outcome {
    let mut r = rng(404);
    let classes = 6;
    let trials = 300;
    let mut violations = 0;
    for _ in 0..trials {
        let batch_count = r.random_range(2..6);
        let mut p = Vec::new();
        let mut q = Vec::new();
        let mut y = Vec::new();
        let mut bounds = vec![0];
        for _ in 0..batch_count {
            let noise_ratio = r.random_range(0.0..1.0);
            for _ in 0..r.random_range(1..40) {
                let label = r.random_range(0..classes);
                let noisy = r.random_bool(noise_ratio);
                p.push(simulated_prediction(&mut r, label, noisy, classes));
                q.push(simulated_prediction(&mut r, label, noisy, classes));
                y.push(smooth_label(label, classes, 0.6).unwrap());
            }
            bounds.push(p.len());
        }
        let tau = r.random_range(0.0..1.0);
        let global = partition_batch(&p, &q, &y, tau, 0.5).unwrap();
        let mut per_batch = Vec::new();
        for w in bounds.windows(2) {
            let part = partition_batch(&p[w[0]..w[1]], &q[w[0]..w[1]], &y[w[0]..w[1]], tau, 0.5).unwrap();
            per_batch.extend(part.clean.iter().map(|i| i + w[0]));
        }
        if per_batch != global.clean {
            violations += 1;
        }
    }

    // Two batches of ten: 10% and 90% noisy, clean losses 0.1, noisy 2.0.
    let batch_a: Vec<f64> = (0..10).map(|i| if i < 9 { 0.1 } else { 2.0 }).collect();
    let batch_b: Vec<f64> = (0..10).map(|i| if i < 1 { 0.1 } else { 2.0 }).collect();
    let mut per_batch = small_loss_select(&batch_a, 0.5).unwrap();
    per_batch.extend(small_loss_select(&batch_b, 0.5).unwrap().iter().map(|i| i + 10));
    let pooled: Vec<f64> = batch_a.iter().chain(&batch_b).copied().collect();
    let global = small_loss_select(&pooled, 0.5).unwrap();
    let small_loss_differs = per_batch != global;
    let noisy_kept = per_batch.iter().filter(|&&i| pooled[i] > 1.0).count();

    outcome(
        violations == 0 && small_loss_differs,
        format!(
            "{trials} random compositions, {violations} clean-set mismatches; small-loss per-batch keeps \
             {noisy_kept} noisy samples vs 0 when pooled (differs: {small_loss_differs})"
        ),
    )
}

fn schedule_and_ema() -> Outcome {
    let mut endpoint_failures = 0;
    let mut cases = 0;
    for tau_c in [0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.94] {
        for (t_w, t_max) in [(1, 2), (10, 100), (10, 200), (7, 13), (30, 31)] {
            let s = ThresholdSchedule { tau_c, tau_m: 0.95, warmup_epochs: t_w, total_epochs: t_max };
            cases += 1;
            if dynamic_threshold(t_w, &s).unwrap() != tau_c || dynamic_threshold(t_max, &s).unwrap() != 0.95 {
                endpoint_failures += 1;
            }
        }
    }

    let mut r = rng(505);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let student = random_model(&mut r, &[4, 6, 3]);
        let mut teacher = MeanTeacher::from_params(random_model(&mut r, &[4, 6, 3]), 0.99).unwrap();
        for _ in 0..50 {
            let gaps: Vec<f64> = teacher
                .params()
                .tensors()
                .zip(student.tensors())
                .flat_map(|(t, s)| t.iter().zip(s).map(|(a, b)| a - b).collect::<Vec<_>>())
                .collect();
            ema_update(&mut teacher, &student).unwrap();
            let after: Vec<f64> = teacher
                .params()
                .tensors()
                .zip(student.tensors())
                .flat_map(|(t, s)| t.iter().zip(s).map(|(a, b)| a - b).collect::<Vec<_>>())
                .collect();
            for (g0, g1) in gaps.iter().zip(&after) {
                worst = worst.max((g1 - 0.99 * g0).abs());
            }
        }
    }
    outcome(
        endpoint_failures == 0 && worst <= 1e-12,
        format!("{cases} schedules, {endpoint_failures} inexact endpoints; max EMA contraction error {worst:.1e}"),
    )
}

fn flattening() -> Outcome {
    let mut r = rng(606);
    let bound = 0.1f64.exp();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_uniform: f64 = 0.0;
    for i in 0..2_000 {
        let c = r.random_range(2..20);
        let p = if i % 2 == 0 {
            let teacher = MeanTeacher::new(&random_model(&mut r, &[3, 5, c]), 0.99).unwrap();
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-20.0..20.0)).collect();
            let flat = teacher_label_ood(&x, &teacher, 10.0).unwrap();
            let wide = teacher_label_ood(&x, &teacher, 1e6).unwrap();
            worst_uniform =
                worst_uniform.max(wide.as_slice().iter().map(|v| (v - 1.0 / c as f64).abs()).fold(0.0, f64::max));
            flat
        } else {
            let mut one_hot = vec![0.0; c];
            one_hot[r.random_range(0..c)] = 1.0;
            let p = ProbDist::new(one_hot).unwrap();
            let wide = flatten(&p, 1e6);
            worst_uniform =
                worst_uniform.max(wide.as_slice().iter().map(|v| (v - 1.0 / c as f64).abs()).fold(0.0, f64::max));
            flatten(&p, 10.0)
        };
        let max = p.as_slice().iter().cloned().fold(0.0, f64::max);
        let min = p.as_slice().iter().cloned().fold(1.0, f64::min);
        worst_ratio = worst_ratio.max(max / min);
    }
    // One-hot inputs sit exactly on the bound; allow a few ulps of rounding.
    outcome(
        worst_ratio <= bound * (1.0 + 4.0 * f64::EPSILON) && worst_uniform <= 1e-6,
        format!("max/min ratio {worst_ratio:.9} (bound {bound:.9}); s=1e6 max deviation {worst_uniform:.1e}"),
    )
}

struct ArmRun {
    n_c: f64,
    method: Method,
    seed: u64,
    records: Vec<EpochRecord>,
    id_frequency: f64,
    ood_frequency: f64,
}

fn desk_runs() -> (Vec<ArmRun>, Vec<(f64, Duration)>) {
    let setup = BlobSetup::default();
    let mut jobs = Vec::new();
    for &n_c in &NOISE_LEVELS {
        let mut methods = vec![Method::Standard, Method::JoSrc(Ablation::Full)];
        if n_c == 0.5 {
            methods.extend([Method::JoSrc(Ablation::C), Method::JoSrc(Ablation::CI), Method::JoSrc(Ablation::CIO)]);
        }
        for method in methods {
            for seed in SEEDS {
                jobs.push((n_c, method, seed));
            }
        }
    }
    let runs: Vec<(ArmRun, Duration)> = jobs
        .par_iter()
        .map(|&(n_c, method, seed)| {
            let start = Instant::now();
            let noise = NoiseSpec {
                noise_type: NoiseType::Symmetry,
                closed_set_ratio: n_c,
                open_set: true,
                ood_class_count: 2,
            };
            let (train, test) = setup.build(&noise, seed).unwrap();
            let config = TrainConfig { seed, ..TrainConfig::default() };
            let records = run(&train, &test, &config, method, RunOptions::default()).unwrap().records;
            let total = train.len() as f64;
            let arm = ArmRun {
                n_c,
                method,
                seed,
                records,
                id_frequency: train.count(josrc::datagen::Provenance::IdNoisy) as f64 / total,
                ood_frequency: train.count(josrc::datagen::Provenance::OodNoisy) as f64 / total,
            };
            (arm, start.elapsed())
        })
        .collect();
    let mut per_level = Vec::new();
    for &n_c in &NOISE_LEVELS {
        let t: Duration = runs
            .iter()
            .filter(|(a, _)| a.n_c == n_c && matches!(a.method, Method::Standard | Method::JoSrc(Ablation::Full)))
            .map(|(_, d)| *d)
            .sum();
        per_level.push((n_c, t));
    }
    (runs.into_iter().map(|(a, _)| a).collect(), per_level)
}

fn mean_final(runs: &[ArmRun], n_c: f64, method: Method) -> f64 {
    let accs =
        runs.iter().filter(|a| a.n_c == n_c && a.method == method).map(|a| final_accuracy(&a.records, 10).unwrap().0);
    100.0 * mean_std(accs).0
}

fn ordering(runs: &[ArmRun], timing: &[(f64, Duration)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (&n_c, (_, time)) in NOISE_LEVELS.iter().zip(timing) {
        let std = mean_final(runs, n_c, Method::Standard);
        let jo = mean_final(runs, n_c, Method::JoSrc(Ablation::Full));
        let need = if n_c == 0.5 { 5.0 } else { 0.0 };
        let ok = jo > std && jo - std >= need && *time < Duration::from_secs(600);
        pass &= ok;
        parts.push(format!("n_c {n_c}: josrc {jo:.2} vs standard {std:.2} ({:.0}s)", time.as_secs_f64()));
    }
    outcome(pass, parts.join("; "))
}

fn ablation_trend(runs: &[ArmRun]) -> Outcome {
    let chain = [
        ("standard", Method::Standard),
        ("C", Method::JoSrc(Ablation::C)),
        ("CI", Method::JoSrc(Ablation::CI)),
        ("CIO", Method::JoSrc(Ablation::CIO)),
        ("full", Method::JoSrc(Ablation::Full)),
    ];
    let values: Vec<f64> = chain.iter().map(|(_, m)| mean_final(runs, 0.5, *m)).collect();
    let worst_gap = values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let listing: Vec<String> = chain.iter().zip(&values).map(|((n, _), v)| format!("{n} {v:.2}")).collect();
    outcome(worst_gap >= -1.0, format!("{}; smallest step {worst_gap:+.2}", listing.join(" <= ")))
}

fn selection_quality(runs: &[ArmRun], t_w: usize) -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for arm in runs.iter().filter(|a| a.n_c == 0.5 && a.method == Method::JoSrc(Ablation::Full)) {
        let tail = &arm.records[arm.records.len() - 10..];
        let avg = |f: &dyn Fn(&EpochRecord) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = tail.iter().map(f).collect::<Option<Vec<_>>>()?;
            Some(mean_std(v).0)
        };
        let clean = avg(&|r| r.precision.clean);
        let id = avg(&|r| r.precision.id);
        let ood = avg(&|r| r.precision.ood);
        let reported = arm.records[t_w..].iter().all(|r| r.precision.id.is_some() && r.precision.ood.is_some());
        let ok = reported
            && clean.is_some_and(|c| c >= 0.6)
            && id.is_some_and(|v| v > arm.id_frequency)
            && ood.is_some_and(|v| v > arm.ood_frequency);
        pass &= ok;
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
        lines.push(format!(
            "seed {}: clean {} id {} (random {:.2}) ood {} (random {:.2})",
            arm.seed,
            f(clean),
            f(id),
            arm.id_frequency,
            f(ood),
            arm.ood_frequency
        ));
    }
    outcome(pass, lines.join("; "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let noise =
        NoiseSpec { noise_type: NoiseType::Symmetry, closed_set_ratio: 0.5, open_set: true, ood_class_count: 2 };
    let (train, test) = BlobSetup::default().build(&noise, 9).unwrap();
    let config = TrainConfig { seed: 9, ..TrainConfig::default() };
    let once = |tag: &str| -> Vec<Vec<u8>> {
        let out = run(&train, &test, &config, Method::JoSrc(Ablation::Full), RunOptions::default()).unwrap();
        let metrics = dir.path().join(format!("{tag}.csv"));
        write_metrics_csv(&out.records, std::fs::File::create(&metrics).unwrap()).unwrap();
        let student = dir.path().join(format!("{tag}.ckpt"));
        let teacher = dir.path().join(format!("{tag}.teacher.ckpt"));
        save_checkpoint(&out.model, &student).unwrap();
        save_checkpoint(out.teacher.params(), &teacher).unwrap();
        [metrics, student, teacher].iter().map(|p| std::fs::read(p).unwrap()).collect()
    };
    let a = once("a");
    let b = once("b");
    let sizes: Vec<usize> = a.iter().map(Vec::len).collect();
    outcome(a == b, format!("metrics/student/teacher bytes {sizes:?}, identical: {}", a == b))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "JS divergence", js_suite()),
        (2, "gradient check", gradient_check()),
        (3, "selection oracle", criterion_oracle()),
        (4, "global selection", global_invariance()),
        (5, "schedule and EMA", schedule_and_ema()),
        (6, "OOD flattening", flattening()),
    ];
    let (runs, timing) = desk_runs();
    results.push((7, "desk ordering", ordering(&runs, &timing)));
    results.push((8, "ablation trend", ablation_trend(&runs)));
    results.push((9, "selection quality", selection_quality(&runs, TrainConfig::default().t_w)));
    results.push((10, "determinism", determinism()));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {name:<18} {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
