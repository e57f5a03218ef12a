use crate::clustering::{reestimate_from_points, Reservoir};
use crate::error::{Result, VqError};
use crate::numerics::Rng;
use crate::quantizer::{Codebook, LossBreakdown, UsageHistogram};

use super::ema::{ema_codebook_update, EmaState};
use super::model::{Batch, BottleneckMode, VqModel};
use super::optim::{polyak_average, sgd_codebook_update, sgd_update, OptimConfig};
use super::schedule::{schedule_step, Phase, TrainSchedule};

/// How codewords are updated after each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodebookRule {
    /// Gradient step on the codebook loss term.
    Sgd,
    /// Discounted running means; the codebook gradient is not used.
    Ema,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub schedule: TrainSchedule,
    /// Rebuild the codebook from the reservoir when the schedule says so.
    /// When off, the schedule still controls warm-up.
    pub reestimate: bool,
    pub optim: OptimConfig,
    pub rule: CodebookRule,
    pub ema_discount: f64,
    pub reservoir_capacity: usize,
    pub lloyd_iters: usize,
    /// Decay of the Polyak parameter average; `None` disables averaging.
    pub polyak_decay: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            schedule: TrainSchedule::plain(),
            reestimate: false,
            optim: OptimConfig::default(),
            rule: CodebookRule::Sgd,
            ema_discount: 0.99,
            reservoir_capacity: 64 * 64,
            lloyd_iters: crate::clustering::DEFAULT_LLOYD_ITERS,
            polyak_decay: None,
        }
    }
}

/// What happened in one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    /// `None` for a model without a bottleneck.
    pub phase: Option<Phase>,
    pub loss: LossBreakdown,
    /// Per-head usage in this batch when quantizing.
    pub usage: Option<Vec<UsageHistogram>>,
    pub reestimated: bool,
}

/// Sequential training loop state: the model, its codebook bookkeeping and
/// the random stream that drives sampling, reservoir updates and
/// reestimation.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: VqModel,
    pub config: TrainerConfig,
    pub reservoir: Reservoir,
    /// One per head when the EMA rule is active.
    pub ema: Vec<EmaState>,
    pub averaged: Option<VqModel>,
    pub iteration: u64,
    pub rng: Rng,
}

impl Trainer {
    pub fn new(model: VqModel, config: TrainerConfig, rng: Rng) -> Result<Self> {
        config.schedule.validate()?;
        config.optim.validate()?;
        if let Some(decay) = config.polyak_decay {
            if !(0.0..1.0).contains(&decay) {
                return Err(VqError::Config(format!("polyak_decay must lie in [0, 1), got {decay}")));
            }
        }
        if config.reestimate && config.reservoir_capacity == 0 {
            return Err(VqError::Config("reservoir_capacity must be positive".into()));
        }
        let ema = match (config.rule, &model.codebooks) {
            (CodebookRule::Ema, Some(cbs)) => cbs
                .iter()
                .map(|c| EmaState::new(c, config.ema_discount))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        let averaged = config.polyak_decay.map(|_| model.clone());
        let reservoir = Reservoir::new(config.reservoir_capacity, model.latent_dim());
        Ok(Self {
            model,
            config,
            reservoir,
            ema,
            averaged,
            iteration: 0,
            rng,
        })
    }

    /// Phase of the next step; `None` without a bottleneck.
    pub fn phase(&self) -> Option<Phase> {
        self.phase_at(self.iteration)
    }

    pub fn phase_at(&self, iteration: u64) -> Option<Phase> {
        if !self.model.has_bottleneck() {
            return None;
        }
        let phase = schedule_step(iteration, &self.config.schedule);
        Some(match phase {
            Phase::Quantize { reestimate_now } => Phase::Quantize {
                reestimate_now: reestimate_now && self.config.reestimate,
            },
            Phase::Warmup => Phase::Warmup,
        })
    }

    /// Bottleneck mode of the next step.
    pub fn bottleneck_mode(&self) -> BottleneckMode {
        mode_of(self.phase())
    }

    /// Bottleneck mode of the most recent step; evaluation uses this so a
    /// model evaluated right after warm-up is still evaluated unquantized.
    pub fn last_bottleneck_mode(&self) -> BottleneckMode {
        mode_of(self.phase_at(self.iteration.saturating_sub(1)))
    }

    /// Swaps in new codebooks and restarts the EMA statistics.
    pub fn set_codebooks(&mut self, codebooks: Vec<Codebook>) -> Result<()> {
        let live = self
            .model
            .codebooks
            .as_mut()
            .ok_or_else(|| VqError::InvalidArgument("model has no bottleneck".into()))?;
        if live.len() != codebooks.len() {
            return Err(VqError::shape("set_codebooks", live.len(), codebooks.len()));
        }
        for (old, new) in live.iter_mut().zip(codebooks) {
            old.replace(new.words().clone())?;
        }
        for (ema, cb) in self.ema.iter_mut().zip(live.iter()) {
            ema.reset(cb);
        }
        Ok(())
    }

    fn reestimate(&mut self) -> Result<()> {
        let cbs = self.model.codebooks.as_ref().expect("checked by phase");
        let (k, d) = (cbs[0].size(), cbs[0].dim());
        let items = self.reservoir.items();
        let mut fresh = Vec::with_capacity(cbs.len());
        for h in 0..cbs.len() {
            let block = items.col_block(h * d, d)?;
            fresh.push(reestimate_from_points(&block, k, &mut self.rng, self.config.lloyd_iters)?);
        }
        self.set_codebooks(fresh)
    }

    /// One iteration: encoder, batch norm, reservoir update, optional
    /// reestimation, quantization (or pass-through during warm-up), decoder,
    /// loss, backward and parameter updates.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let phase = self.phase();
        let mode = self.bottleneck_mode();

        let encoded = self.model.encode(&batch.inputs, true)?;
        let mut reestimated = false;
        if self.model.has_bottleneck() {
            self.reservoir.update(&encoded.latents, &mut self.rng)?;
            if let Some(Phase::Quantize { reestimate_now: true }) = phase {
                self.reestimate()?;
                reestimated = true;
            }
        }
        let fwd = self.model.finish(encoded, &batch.targets, mode)?;
        if !fwd.loss.total.is_finite() {
            return Err(VqError::NonFinite("training loss"));
        }

        let grads = self.model.full_backward(&fwd, 1.0)?;
        let lr = self.config.optim.lr;
        for (p, g) in self.model.network_params_and_grads(&grads) {
            sgd_update(p, g, lr)?;
        }

        if let (Some(assignment), Some(cbs)) = (&fwd.assignment, self.model.codebooks.as_mut()) {
            match self.config.rule {
                CodebookRule::Sgd => {
                    for (cb, g) in cbs.iter_mut().zip(&grads.codebooks) {
                        sgd_codebook_update(cb, g, &self.config.optim)?;
                    }
                }
                CodebookRule::Ema => {
                    let d = cbs[0].dim();
                    for (h, (cb, ema)) in cbs.iter_mut().zip(self.ema.iter_mut()).enumerate() {
                        let block = fwd.latents.col_block(h * d, d)?;
                        ema_codebook_update(ema, &block, &assignment.head_indices(h), cb)?;
                    }
                }
            }
        }

        if let (Some(avg), Some(decay)) = (self.averaged.as_mut(), self.config.polyak_decay) {
            for (a, p) in avg.param_slices_mut().into_iter().zip(self.model.param_slices()) {
                polyak_average(a, p, decay);
            }
        }

        let report = StepReport {
            iteration: self.iteration,
            phase,
            loss: fwd.loss,
            usage: fwd.assignment.map(|a| a.head_histograms().to_vec()),
            reestimated,
        };
        self.iteration += 1;
        Ok(report)
    }

    /// The model to evaluate: the Polyak average (with live batch-norm
    /// running statistics) unless `raw` or averaging is off.
    pub fn eval_model(&self, raw: bool) -> VqModel {
        match (&self.averaged, raw) {
            (Some(avg), false) => {
                let mut m = avg.clone();
                if let (Some(bn), Some(live)) = (m.batch_norm.as_mut(), self.model.batch_norm.as_ref()) {
                    bn.running_mean.clone_from(&live.running_mean);
                    bn.running_var.clone_from(&live.running_var);
                }
                m
            }
            _ => self.model.clone(),
        }
    }
}

fn mode_of(phase: Option<Phase>) -> BottleneckMode {
    match phase {
        Some(Phase::Quantize { .. }) => BottleneckMode::Quantize,
        _ => BottleneckMode::PassThrough,
    }
}
