//! Vector-quantized bottlenecks and the training rules that keep their
//! codebooks in use.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense row-major matrices, a seedable RNG and a
//!   central-difference gradient checker.
//! * [`quantizer`]: nearest-codeword assignment, multi-head splitting, the
//!   three-term VQ loss, straight-through backward and usage statistics.
//! * [`clustering`]: reservoir sampling, k-means++ seeding and Lloyd
//!   refinement used to reestimate a codebook from recent encoder outputs.
//! * [`trainer`]: phase scheduling, SGD and EMA codebook rules, batch
//!   normalization, Polyak averaging and the full training step.
//! * [`models`]: small MLP encoders/decoders with hand-written gradients and
//!   the discrete likelihood heads.
//! * [`harness`]: synthetic data, metrics (BPD, NELBO), experiment presets,
//!   the scaling sweep and CSV output.
//! * [`io`]: the codebook file format and the checkpoint container.

pub mod clustering;
pub mod error;
pub mod harness;
pub mod io;
pub mod models;
pub mod numerics;
pub mod quantizer;
pub mod trainer;

pub use error::{Result, VqError};
pub use numerics::{finite_diff_grad, pairwise_sq_dists, Matrix, Rng};
pub use quantizer::{Assignment, Codebook, LossBreakdown, QuantizerConfig, UsageHistogram};
