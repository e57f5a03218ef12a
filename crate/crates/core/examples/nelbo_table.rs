//! Bits-per-dimension bookkeeping: the uniform prior charges log2(K) bits
//! per latent, the unigram prior only log2(perplexity).

use vqlab::harness::{bpd, nelbo_uniform, nelbo_unigram};

fn main() {
    // 32 pixels high, 4 columns per latent
    let dims_per_latent = 128.0;
    let k = 4096;
    println!("{:>6} {:>6} {:>8} {:>8}", "bpd", "pplx", "uniform", "unigram");
    for (b, pplx) in [(0.213, 322.0), (0.216, 260.0), (0.212, 432.0), (0.207, 1118.0), (0.200, 2388.0), (0.200, 2446.0)] {
        println!(
            "{b:>6.3} {pplx:>6} {:>8.3} {:>8.3}",
            nelbo_uniform(b, k, dims_per_latent),
            nelbo_unigram(b, pplx, dims_per_latent)
        );
    }

    let nats = 16.0 * 2.0_f64.ln() * 1.5;
    println!("\n{nats:.3} nats over 16 dims = {:.3} bits/dim", bpd(nats, 16));
}
