//! Compares training methods on open-set blobs over several seeds.
//!
//! ```text
//! cargo run --release -p josrc-core --example sweep -- nc=0.5 seeds=5 arms=standard,josrc
//! ```
//!
//! Any `TrainConfig` knob listed in `apply` can be overridden as `key=value`.

use josrc::datagen::{BlobSetup, NoiseSpec, NoiseType};
use josrc::trainer::{final_accuracy, mean_std, run, Method, RunOptions, TrainConfig};
use rayon::prelude::*;

fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> bool {
    let num = || value.parse::<f64>().expect("numeric value");
    match key {
        "tau_c" => cfg.tau_c = num(),
        "alpha" => cfg.alpha = num(),
        "delta_js" => cfg.delta_js = num(),
        "epsilon" => cfg.epsilon = num(),
        "base_lr" => cfg.base_lr = num(),
        "t_max" => cfg.t_max = num() as usize,
        "t_w" => cfg.t_w = num() as usize,
        "decay_start_epoch" => cfg.decay_start_epoch = num() as usize,
        _ => return false,
    }
    true
}

fn main() {
    let mut cfg = TrainConfig::default();
    let mut setup = BlobSetup::default();
    let mut n_c = 0.5;
    let mut seeds = 3u64;
    let mut noise_type = NoiseType::Symmetry;
    let mut arms = vec![Method::Standard, Method::parse("josrc").unwrap()];
    for arg in std::env::args().skip(1) {
        let (key, value) = arg.split_once('=').expect("arguments are key=value");
        if apply(&mut cfg, key, value) {
            continue;
        }
        match key {
            "nc" => n_c = value.parse().unwrap(),
            "seeds" => seeds = value.parse().unwrap(),
            "spread" => setup.spread = value.parse().unwrap(),
            "dim" => setup.dim = value.parse().unwrap(),
            "noise" => noise_type = if value == "asym" { NoiseType::Asymmetry } else { NoiseType::Symmetry },
            "arms" => arms = value.split(',').map(|a| Method::parse(a).expect("known arm")).collect(),
            _ => panic!("unknown key {key}"),
        }
    }
    let noise = NoiseSpec { noise_type, closed_set_ratio: n_c, open_set: true, ood_class_count: 2 };
    let jobs: Vec<(u64, Method)> = (1..=seeds).flat_map(|s| arms.iter().map(move |m| (s, *m))).collect();
    let results: Vec<(Method, f64)> = jobs
        .par_iter()
        .map(|&(seed, method)| {
            let (train, test) = setup.build(&noise, seed).unwrap();
            let config = TrainConfig { seed, ..cfg.clone() };
            let out = run(&train, &test, &config, method, RunOptions::default()).unwrap();
            (method, final_accuracy(&out.records, 10).unwrap().0)
        })
        .collect();
    for method in &arms {
        let accs: Vec<f64> = results.iter().filter(|r| r.0 == *method).map(|r| 100.0 * r.1).collect();
        let (mean, std) = mean_std(accs.iter().copied());
        println!("{:>20}  {mean:6.2} ± {std:5.2}  {accs:.1?}", method.name());
    }
}
