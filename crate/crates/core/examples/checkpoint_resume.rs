//! Stops a run in the middle of the reestimation window, writes a
//! checkpoint, resumes from it and checks the result matches an
//! uninterrupted run byte for byte. Also saves the final codebooks.

use vqlab::harness::{Experiment, ExperimentConfig, Method};
use vqlab::io::{load_codebooks, save_codebooks};

fn main() -> vqlab::Result<()> {
    let cfg = ExperimentConfig {
        iterations: 600,
        ..ExperimentConfig::preset(Method::BnReestLr, 5)
    };
    let dir = std::env::temp_dir().join("vqlab-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join("run.ckpt");

    let mut straight = Experiment::new(cfg.clone())?;
    straight.run()?;

    let mut first = Experiment::new(cfg.clone())?;
    first.run_until(250)?;
    first.save_checkpoint(&ckpt)?;
    drop(first);

    let mut second = Experiment::resume_from(cfg, &ckpt)?;
    println!("resumed at iteration {}", second.iteration());
    second.run()?;
    println!("identical CSV: {}", straight.csv() == second.csv());

    let books = dir.join("codebooks.bin");
    let live = second.trainer().model.codebooks.clone().unwrap_or_default();
    save_codebooks(&books, &live)?;
    println!("reloaded codebooks equal: {}", load_codebooks(&books)? == live);
    Ok(())
}
