//! Polyak-averaged parameters lag behind while the codebook is being
//! reestimated, since each reestimation replaces the codewords the average
//! was built from. Once reestimation stops the gap closes.

use vqlab::harness::{Experiment, ExperimentConfig, Method};

fn main() -> vqlab::Result<()> {
    let mut base = ExperimentConfig::preset(Method::BnReestLr, 0);
    base.polyak_decay = 0.995;
    base.iterations = 1600;
    base.eval_every = 100;

    let curve = |raw: bool| -> vqlab::Result<Vec<(u64, f64)>> {
        let mut exp = Experiment::new(ExperimentConfig { eval_raw: raw, ..base.clone() })?;
        exp.run()?;
        Ok(exp.rows().iter().map(|r| (r.iteration, r.bpd.unwrap_or(f64::NAN))).collect())
    };
    let averaged = curve(false)?;
    let raw = curve(true)?;

    let window_end = base.m_init + base.m_reestim;
    println!("reestimation runs until iteration {window_end}");
    println!("{:>9} {:>10} {:>10}", "iteration", "raw bpd", "avg bpd");
    for ((it, a), (_, r)) in averaged.iter().zip(&raw) {
        println!("{it:>9} {r:>10.4} {a:>10.4}");
    }
    Ok(())
}
