//! Dense matrices, seeded randomness and finite-difference gradients.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::{finite_diff_grad, max_relative_error, richardson_diff_grad};
pub use matrix::{pairwise_sq_dists, Matrix};
pub(crate) use matrix::sq_dist;
pub use rng::{Rng, RngState};
