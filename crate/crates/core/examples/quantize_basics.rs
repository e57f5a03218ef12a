//! Nearest-codeword quantization, the VQ loss terms, the straight-through
//! gradient and usage statistics on a tiny hand-written codebook.

use vqlab::quantizer::{
    codebook_grad, nearest_code, perplexity, quantize, straight_through_backward, used_tokens, vq_loss,
};
use vqlab::{Codebook, Matrix, QuantizerConfig};

fn main() -> vqlab::Result<()> {
    let codebook = Codebook::new(Matrix::from_rows(&[
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![5.0, 5.0],
    ]))?;
    let latents = Matrix::from_rows(&[
        vec![0.1, -0.2],
        vec![0.9, 0.2],
        vec![0.2, 0.8],
        vec![0.7, 0.1],
        vec![0.5, 0.5],
    ]);

    let assignment = nearest_code(&latents, &codebook)?;
    println!("assigned codewords: {:?}", assignment.indices());

    let cfg = QuantizerConfig::default();
    let (quantized, _) = quantize(&latents, std::slice::from_ref(&codebook), &cfg)?;
    let loss = vq_loss(&latents, &quantized, 0.0, cfg.gamma_commit)?;
    println!(
        "codebook term {:.4}  commitment term {:.4}  (gamma = {})",
        loss.codebook, loss.commitment, cfg.gamma_commit
    );

    // a decoder would supply this; use ones to see the commitment part
    let upstream = Matrix::filled(latents.rows(), 2, 1.0);
    let to_encoder = straight_through_backward(&upstream, &latents, &quantized, cfg.gamma_commit)?;
    println!("gradient reaching the encoder, first row: {:?}", to_encoder.row(0));

    let to_codebook = codebook_grad(&latents, assignment.indices(), &codebook)?;
    println!("codebook gradient (last row is unused, so zero):");
    for row in to_codebook.row_iter() {
        println!("  {row:?}");
    }

    let usage = assignment.histogram();
    println!(
        "used {} of {} codewords, perplexity {:.3}",
        used_tokens(&usage),
        codebook.size(),
        perplexity(&usage)?
    );
    Ok(())
}
