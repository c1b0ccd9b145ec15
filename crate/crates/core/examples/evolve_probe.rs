//! Runs one LeNet5 lineage on MNIST and prints every generation.
//!
//! `cargo run --release -p stressnet --example evolve_probe -- DIR FACTOR GENERATIONS [TRAIN_SAMPLES]`

use stressnet::evolution::{evolve_with, EvolutionConfig};
use stressnet::io::idx::{load_mnist, Split};
use stressnet::NetworkArchitecture;

fn main() -> stressnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args.first().map_or("data/mnist", |s| s.as_str());
    let factor: f64 = args.get(1).map_or(0.8, |s| s.parse().unwrap());
    let gens: usize = args.get(2).map_or(10, |s| s.parse().unwrap());
    let samples: usize = args.get(3).map_or(60_000, |s| s.parse().unwrap());
    let train = load_mnist(dir, Split::Train)?.head(samples);
    let test = load_mnist(dir, Split::Test)?;
    let mut cfg = EvolutionConfig::new(factor, 0.9, 1)?;
    cfg.max_generations = gens;
    cfg.log_wall_time = true;
    let started = std::time::Instant::now();
    let out = evolve_with(
        &cfg,
        &NetworkArchitecture::lenet5_caffe(),
        &train,
        &test,
        None,
        |s| {
            let r = s.records.last().unwrap();
            println!(
                "g={} {} nonzero={:.4} err={:.4} expected={:.0} t={:.0}s total={:.0}s",
                r.generation,
                r.descriptor,
                r.nonzero_ratio,
                r.test_error,
                r.expected_synapses.unwrap_or(0.0),
                r.wall_seconds,
                started.elapsed().as_secs_f64()
            );
            Ok(())
        },
    )?;
    println!(
        "stop={} best={}",
        out.lineage.stop_reason.as_str(),
        out.lineage.best
    );
    Ok(())
}
