#![allow(dead_code)]

use josrc::nn::MlpModel;
use josrc::ProbDist;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strictly positive random distribution, sometimes sharply peaked.
pub fn random_dist<R: Rng>(rng: &mut R, classes: usize) -> ProbDist {
    let sharp = rng.random_bool(0.3);
    let raw: Vec<f64> = (0..classes)
        .map(|_| {
            let u: f64 = rng.random_range(1e-9..1.0);
            let e = -u.ln();
            if sharp {
                e.powi(6)
            } else {
                e
            }
        })
        .map(|v| v.max(1e-300))
        .collect();
    let total: f64 = raw.iter().sum();
    ProbDist::new(raw.iter().map(|v| v / total).collect()).unwrap()
}

pub fn random_model<R: Rng>(rng: &mut R, dims: &[usize]) -> MlpModel {
    MlpModel::init(dims, rng).unwrap()
}

pub fn random_input<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

/// Base-2 Jensen-Shannon divergence as `H(M) - (H(P) + H(Q)) / 2`.
pub fn js_oracle(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    entropy_bits(&m) - 0.5 * (entropy_bits(p) + entropy_bits(q))
}

/// Two classes, one-hot against uniform, written out term by term.
pub fn js_two_class_onehot_uniform() -> f64 {
    // Mixture is (3/4, 1/4).
    let kl_onehot = (1.0f64 / 0.75).log2();
    let kl_uniform = 0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2();
    0.5 * kl_onehot + 0.5 * kl_uniform
}

pub fn first_argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Per-sample selection rule written directly from its definition:
/// 0 = clean, 1 = ID, 2 = OOD.
pub fn brute_force_subset(p: &[f64], q: &[f64], y: &[f64], tau_clean: f64, tau_ood: f64) -> u8 {
    let p_clean = 1.0 - js_oracle(p, y).clamp(0.0, 1.0);
    let p_ood = if first_argmax(p) == first_argmax(q) { 0.0 } else { 1.0 };
    if p_clean > tau_clean {
        0
    } else if p_ood > tau_ood {
        2
    } else {
        1
    }
}

/// Natural-log loss of one batch computed from logits, independent of the
/// library's loss code.
pub fn reference_loss(
    model: &MlpModel,
    pairs: &[(Vec<f64>, Vec<f64>)],
    targets: &[Vec<f64>],
    signs: &[f64],
    alpha: f64,
) -> f64 {
    let log_probs = |x: &[f64]| -> Vec<f64> {
        let z = model.logits(x).unwrap();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        z.iter().map(|v| v - lse).collect()
    };
    let n = pairs.len() as f64;
    let mut l_c = 0.0;
    let mut l_o = 0.0;
    for (((a, b), y), s) in pairs.iter().zip(targets).zip(signs) {
        let la = log_probs(a);
        let lb = log_probs(b);
        for k in 0..y.len() {
            l_c -= y[k] * (la[k] + lb[k]);
            let pa = la[k].exp();
            let pb = lb[k].exp();
            l_o += s * (pa - pb) * (la[k] - lb[k]);
        }
    }
    (1.0 - alpha) * l_c / n + alpha * l_o / n
}

/// Relative error `|g - fd| / max(|g|, |fd|)` between the analytic gradient
/// and central differences of [`reference_loss`], over all parameters.
pub fn gradient_relative_error(
    model: &MlpModel,
    pairs: &[(Vec<f64>, Vec<f64>)],
    targets: &[Vec<f64>],
    signs: &[f64],
    alpha: f64,
) -> f64 {
    use josrc::datagen::ViewPair;
    use josrc::objective::Sign;

    let views: Vec<ViewPair> = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b))| ViewPair { v: a.clone(), v_prime: b.clone(), source_index: i })
        .collect();
    let dists: Vec<ProbDist> = targets.iter().map(|t| ProbDist::new(t.clone()).unwrap()).collect();
    let sign_tags: Vec<Sign> = signs.iter().map(|&s| if s > 0.0 { Sign::Agree } else { Sign::Repel }).collect();
    let analytic: Vec<f64> = josrc::nn::backward(model, &views, &dists, &sign_tags, alpha)
        .unwrap()
        .grads
        .tensors()
        .flat_map(|t| t.iter().copied())
        .collect();

    let h = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = model.clone();
    let sizes: Vec<usize> = model.tensors().map(|t| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = probe.tensors().nth(ti).unwrap()[j];
            probe.tensors_mut().nth(ti).unwrap()[j] = orig + h;
            let up = reference_loss(&probe, pairs, targets, signs, alpha);
            probe.tensors_mut().nth(ti).unwrap()[j] = orig - h;
            let down = reference_loss(&probe, pairs, targets, signs, alpha);
            probe.tensors_mut().nth(ti).unwrap()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Random small model, batch, targets and signs for gradient checking.
pub fn random_problem<R: Rng>(rng: &mut R) -> (MlpModel, Vec<(Vec<f64>, Vec<f64>)>, Vec<Vec<f64>>, Vec<f64>) {
    let dim = rng.random_range(1..5);
    let classes = rng.random_range(2..5);
    let mut dims = vec![dim];
    for _ in 0..rng.random_range(0..3) {
        dims.push(rng.random_range(1..6));
    }
    dims.push(classes);
    let mut model = random_model(rng, &dims);
    // Non-zero biases keep pre-activations off the ReLU kink even when every
    // unit feeding a layer is inactive.
    for l in 0..model.num_layers() {
        for b in model.biases_mut(l) {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let n = rng.random_range(1..5);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|_| (random_input(rng, dim), random_input(rng, dim))).collect();
    let targets: Vec<Vec<f64>> = (0..n).map(|_| random_dist(rng, classes).into_vec()).collect();
    let signs: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    (model, pairs, targets, signs)
}
