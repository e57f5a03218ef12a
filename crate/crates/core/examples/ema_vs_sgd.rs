//! EMA codebook updates with the usage counts pinned to one follow exactly
//! the same trajectory as SGD on the codebook loss with step (1 - discount)/2.
//! With free counts, each codeword gets its own effective step size.

use vqlab::quantizer::{codebook_grad, init_codebook};
use vqlab::trainer::{ema_codebook_update, sgd_codebook_update, EmaState, OptimConfig};
use vqlab::{Matrix, Rng};

fn main() -> vqlab::Result<()> {
    let (k, d, discount) = (8, 4, 0.9);
    let mut rng = Rng::seed_from_u64(7);
    let start = init_codebook(k, d, 1.0, &mut rng)?;

    let mut by_ema = start.clone();
    let mut by_sgd = start.clone();
    let mut pinned = EmaState::with_pinned_counts(&by_ema, discount)?;
    // the codebook gradient is a batch mean, so scale the step by the batch size
    let optim = OptimConfig {
        lr: (1.0 - discount) / 2.0 * k as f64,
        codebook_lr_mult: 1.0,
    };

    for step in 1..=100 {
        let batch = Matrix::from_fn(k, d, |_, _| rng.normal());
        let mut idx: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut idx);
        ema_codebook_update(&mut pinned, &batch, &idx, &mut by_ema)?;
        let g = codebook_grad(&batch, &idx, &by_sgd)?;
        sgd_codebook_update(&mut by_sgd, &g, &optim)?;
        if step % 25 == 0 {
            let diff = by_ema.words().max_abs_diff(by_sgd.words())?;
            println!("step {step:>3}: max |EMA - SGD| = {diff:.2e}");
        }
    }

    // free counts: codeword 0 is busy, codeword 1 rarely used
    let mut cb = init_codebook(2, 1, 0.0, &mut rng)?;
    let mut ema = EmaState::new(&cb, discount)?;
    let target = Matrix::filled(4, 1, 1.0);
    for _ in 0..3 {
        ema_codebook_update(&mut ema, &target, &[0, 0, 0, 1], &mut cb)?;
        println!(
            "counts {:.3?}  codewords ({:.3}, {:.3})",
            ema.counts(),
            cb.word(0)[0],
            cb.word(1)[0]
        );
    }
    Ok(())
}
