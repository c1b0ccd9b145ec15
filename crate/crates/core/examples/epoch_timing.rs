//! Times one LeNet5 training epoch on MNIST.
//!
//! `cargo run --release -p stressnet --example epoch_timing -- data/mnist [samples]`

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stressnet::io::idx::{load_mnist, Split};
use stressnet::nn::evaluate;
use stressnet::optim::{train_epoch, Sgd, TrainConfig};
use stressnet::{NetworkArchitecture, ParameterSet};

fn main() -> stressnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let samples: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(60_000);
    let train = load_mnist(&dir, Split::Train)?.head(samples);
    let test = load_mnist(&dir, Split::Test)?;
    let arch = NetworkArchitecture::lenet5_caffe();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParameterSet::<f32>::init(&arch, &mut rng);
    let cfg = TrainConfig::default();
    let mut sgd = Sgd::new(&params, cfg.learning_rate, cfg.momentum)?;
    let t = Instant::now();
    let loss = train_epoch(
        &arch,
        &mut params,
        &train,
        &cfg,
        &mut sgd,
        &mut rng,
        |_, _, _| Ok(()),
    )?;
    let train_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let err = evaluate(&arch, &params, &test)?;
    println!(
        "samples={samples} loss={loss:.4} train_s={train_secs:.1} test_err={err:.4} eval_s={:.1}",
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
