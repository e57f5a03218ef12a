//! Training rules around the bottleneck: the warm-up/reestimation schedule,
//! codebook SGD with its own learning-rate multiplier, the EMA rule, batch
//! normalization ahead of the quantizer, Polyak averaging, and the full
//! training step tying them together.

mod batchnorm;
mod ema;
mod model;
mod optim;
mod schedule;
mod step;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormState};
pub use ema::{ema_codebook_update, EmaState};
pub use model::{Batch, BottleneckMode, Encoded, ForwardPass, Gradients, TaskKind, VqModel};
pub use optim::{polyak_average, sgd_codebook_update, sgd_update, OptimConfig};
pub use schedule::{schedule_step, Phase, TrainSchedule};
pub use step::{CodebookRule, StepReport, Trainer, TrainerConfig};
