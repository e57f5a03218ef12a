//! Streams batches through a reservoir, then rebuilds a codebook from it
//! with k-means++ seeding and Lloyd refinement.

use vqlab::clustering::{
    kmeanspp_seed, lloyd_with_trace, quantization_cost, reestimate_codebook, Reservoir,
    DEFAULT_LLOYD_ITERS,
};
use vqlab::{Matrix, Rng};

fn main() -> vqlab::Result<()> {
    let mut rng = Rng::seed_from_u64(1);
    let centers = Matrix::from_fn(8, 2, |_, _| 10.0 * rng.uniform());

    let mut reservoir = Reservoir::new(256, 2);
    for _ in 0..40 {
        let batch = Matrix::from_fn(64, 2, |_, c| {
            let k = rng.below(8);
            centers.get(k, c) + 0.3 * rng.normal()
        });
        reservoir.update(&batch, &mut rng)?;
    }
    println!("reservoir holds {} of {} points seen", reservoir.len(), reservoir.seen());

    let points = reservoir.items();
    let seeds = kmeanspp_seed(&points, 8, &mut rng)?;
    let report = lloyd_with_trace(&points, &seeds, 20, 1e-9)?;
    println!("seeding cost {:.2}", quantization_cost(&points, &seeds));
    for (i, c) in report.costs.iter().enumerate() {
        println!("  lloyd iteration {:>2}: cost {c:.2}", i + 1);
    }

    let codebook = reestimate_codebook(&reservoir, 8, &mut rng, DEFAULT_LLOYD_ITERS)?;
    println!("reestimated codebook:");
    for w in codebook.words().row_iter() {
        println!("  ({:6.3}, {:6.3})", w[0], w[1]);
    }
    Ok(())
}
