//! Batch normalization pins the latent scale, so a unit-scale codebook
//! stays comparable to the encoder outputs however large those are.

use vqlab::quantizer::{init_codebook, nearest_code, perplexity};
use vqlab::trainer::{batchnorm_forward, BatchNormState};
use vqlab::{Matrix, Rng};

fn main() -> vqlab::Result<()> {
    let mut rng = Rng::seed_from_u64(3);
    let codebook = init_codebook(32, 4, 1.0, &mut rng)?;
    for scale in [0.01, 1.0, 100.0] {
        let latents = Matrix::from_fn(512, 4, |_, _| scale * rng.normal());
        let raw = perplexity(&nearest_code(&latents, &codebook)?.histogram())?;
        let mut bn = BatchNormState::new(4);
        let (normed, _) = batchnorm_forward(&latents, &mut bn, true)?;
        let with_bn = perplexity(&nearest_code(&normed, &codebook)?.histogram())?;
        println!("latent scale {scale:>6}: perplexity {raw:6.2} raw, {with_bn:6.2} after batch norm");
    }
    Ok(())
}
