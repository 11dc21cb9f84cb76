//! Trains one model on the default synthetic task and prints its curves.
//!
//! `cargo run --release -p mlsmooth-toynmt --example quick_run -- [mode] [seed] [f32|f64]`

use std::time::Instant;

use mlsmooth_core::{Betas, SmoothingSpec};
use mlsmooth_toynmt::{gen_synthetic, run_one, ModelScalar, RunSettings, SyntheticTaskSpec};

fn go<S: ModelScalar>(spec: SmoothingSpec<f64>, seed: u64) {
    let corpus = gen_synthetic(&SyntheticTaskSpec::default()).expect("default task is valid");
    let settings = RunSettings {
        model: Default::default(),
        train: Default::default(),
        eval: Default::default(),
    };
    let start = Instant::now();
    let (_, report) = run_one::<S>(&corpus, &spec, &settings, seed).expect("training succeeds");
    let secs = start.elapsed().as_secs_f64();
    for (i, step) in report.train.steps.iter().enumerate() {
        println!(
            "step {step:5}  soft_ce {:.4}  train_ppl {:.4}  dev_ppl {:.4}",
            report.train.train_soft_ce[i], report.train.train_ppl[i], report.train.dev_ppl[i]
        );
    }
    println!("{:#?}", report.dev);
    println!("{:.1}s total, {:.1} ms/step", secs, 1e3 * secs / settings.train.max_steps as f64);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("masked");
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = match mode {
        "onehot" => SmoothingSpec::one_hot(),
        "uniform" => SmoothingSpec::uniform(0.1),
        "weighted" => SmoothingSpec::weighted(0.1, Betas::equal()),
        _ => SmoothingSpec::masked(0.1),
    };
    match args.get(3).map(String::as_str) {
        Some("f32") => go::<f32>(spec, seed),
        _ => go::<f64>(spec, seed),
    }
}
