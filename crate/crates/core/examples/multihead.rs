//! Four heads of sixteen codewords quantizing equal slices of an
//! eight-dimensional latent, each with its own usage statistics.

use vqlab::harness::{Experiment, ExperimentConfig, Method};
use vqlab::quantizer::{perplexity, used_tokens};
use vqlab::trainer::Batch;

fn main() -> vqlab::Result<()> {
    let mut cfg = ExperimentConfig::multihead(Method::BnReestLr, 0);
    cfg.iterations = 1200;
    let mut exp = Experiment::new(cfg.clone())?;
    exp.run()?;
    let last = exp.rows().last().expect("at least one evaluation");
    println!(
        "mean per-head perplexity {:.2}, total used tokens {}",
        last.perplexity.unwrap_or(0.0),
        last.used_tokens.unwrap_or(0)
    );

    let test = &exp.data().test;
    let batch = Batch {
        inputs: test.inputs.clone(),
        targets: test.targets(cfg.task).to_vec(),
    };
    let mut model = exp.trainer().eval_model(false);
    let fwd = model.forward(&batch, exp.trainer().last_bottleneck_mode(), false)?;
    if let Some(a) = &fwd.assignment {
        for (h, hist) in a.head_histograms().iter().enumerate() {
            println!("head {h}: used {:>2}/16, perplexity {:.2}", used_tokens(hist), perplexity(hist)?);
        }
    }
    Ok(())
}
