//! Codebook initialization-scale sweep: codewords drawn much larger than
//! the encoder outputs collapse onto a handful of tokens.

use vqlab::harness::{scaling_sweep, spearman, sweep_csv, ExperimentConfig, Method, SWEEP_SCALES};

fn main() -> vqlab::Result<()> {
    let cfg = ExperimentConfig::preset(Method::Vanilla, 0);
    let rows = scaling_sweep(&SWEEP_SCALES, &cfg)?;
    print!("{}", sweep_csv(&rows));
    let logs: Vec<f64> = rows.iter().map(|r| r.scale.ln()).collect();
    let used: Vec<f64> = rows.iter().map(|r| r.used_tokens as f64).collect();
    println!("rank correlation of log scale and used tokens: {:.3}", spearman(&logs, &used));
    Ok(())
}
