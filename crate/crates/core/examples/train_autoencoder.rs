//! Trains one configuration on the synthetic autoencoding task and prints
//! the metrics CSV. Pass a method name to pick the preset, e.g.
//! `cargo run --release --example train_autoencoder -- bn_ema`.

use vqlab::harness::{Experiment, ExperimentConfig, Method};

fn main() -> vqlab::Result<()> {
    let method: Method = match std::env::args().nth(1) {
        Some(name) => name.parse()?,
        None => Method::BnReestLr,
    };
    let cfg = ExperimentConfig {
        iterations: 1000,
        ..ExperimentConfig::preset(method, 0)
    };
    let mut exp = Experiment::new(cfg)?;
    exp.run()?;
    print!("{}", exp.csv());
    Ok(())
}
