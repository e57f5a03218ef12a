//! One training run on synthetic data: model construction, the training
//! loop with periodic held-out evaluation, and checkpoint/resume.

use std::path::Path;

use crate::error::{Result, VqError};
use crate::io::Container;
use crate::models::{Activation, DiscretizedLikelihoodHead, MlpStack};
use crate::numerics::{Matrix, Rng, RngState};
use crate::quantizer::{init_codebook, perplexity, used_tokens, QuantizerConfig};
use crate::trainer::{
    Batch, BatchNormState, CodebookRule, EmaState, OptimConfig, StepReport, TaskKind, TrainSchedule,
    Trainer, TrainerConfig, VqModel,
};

use super::config::{ExperimentConfig, Task};
use super::metrics::{bpd, nelbo_uniform, nelbo_unigram, parse_csv, to_csv, MetricsRow};
use super::synthetic::{make_synthetic, SyntheticData, SyntheticSpec};

const MODEL_STREAM: u64 = 0x4D4F_4445_4C00_0000;
const TRAIN_STREAM: u64 = 0x5452_4149_4E00_0000;

pub struct Experiment {
    cfg: ExperimentConfig,
    data: SyntheticData,
    test_batch: Batch,
    trainer: Trainer,
    rows: Vec<MetricsRow>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        Self::build(cfg, None)
    }

    /// Like [`Experiment::new`] but with `warmup` pass-through iterations
    /// regardless of the preset (reestimation stays as the preset says).
    pub fn with_warmup(cfg: ExperimentConfig, warmup: u64) -> Result<Self> {
        Self::build(cfg, Some(warmup))
    }

    fn build(cfg: ExperimentConfig, warmup: Option<u64>) -> Result<Self> {
        cfg.validate()?;
        let flags = cfg.flags();
        let data = make_synthetic(&SyntheticSpec::from_config(&cfg), cfg.seed);
        let model = build_model(&cfg, &mut Rng::seed_from_u64(cfg.seed ^ MODEL_STREAM))?;

        let mut schedule = if flags.reestimate {
            TrainSchedule {
                m_init: cfg.m_init,
                m_reestim: cfg.m_reestim,
                r_reestim: cfg.r_reestim,
            }
        } else {
            TrainSchedule::plain()
        };
        if let Some(w) = warmup {
            schedule.m_init = w;
        }
        let trainer_cfg = TrainerConfig {
            schedule,
            reestimate: flags.reestimate,
            optim: OptimConfig {
                lr: cfg.lr,
                codebook_lr_mult: cfg.effective_codebook_lr_mult(),
            },
            rule: flags.rule,
            ema_discount: cfg.ema_discount,
            reservoir_capacity: cfg.effective_reservoir_capacity(),
            lloyd_iters: cfg.lloyd_iters,
            polyak_decay: (cfg.polyak_decay > 0.0).then_some(cfg.polyak_decay),
        };
        let trainer = Trainer::new(model, trainer_cfg, Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM))?;
        let test_batch = Batch {
            inputs: data.test.inputs.clone(),
            targets: data.test.targets(cfg.task).to_vec(),
        };
        Ok(Self {
            cfg,
            data,
            test_batch,
            trainer,
            rows: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn data(&self) -> &SyntheticData {
        &self.data
    }

    pub fn trainer(&self) -> &Trainer {
        &self.trainer
    }

    pub fn trainer_mut(&mut self) -> &mut Trainer {
        &mut self.trainer
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn iteration(&self) -> u64 {
        self.trainer.iteration
    }

    /// Minibatch drawn with replacement from the training split.
    pub fn sample_batch(&mut self) -> Batch {
        let n = self.data.train.len();
        let idx: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| self.trainer.rng.below(n))
            .collect();
        let sub = self.data.train.subset(&idx);
        Batch {
            targets: sub.targets(self.cfg.task).to_vec(),
            inputs: sub.inputs,
        }
    }

    /// One training step, followed by an evaluation when one is due.
    pub fn step(&mut self) -> Result<StepReport> {
        let batch = self.sample_batch();
        let report = self.trainer.train_step(&batch)?;
        let done = self.trainer.iteration;
        if done % self.cfg.eval_every == 0 || done == self.cfg.iterations {
            let row = self.evaluate()?;
            self.rows.push(row);
        }
        Ok(report)
    }

    /// Trains until `iteration` steps have been taken in total.
    pub fn run_until(&mut self, iteration: u64) -> Result<()> {
        while self.trainer.iteration < iteration {
            self.step()?;
        }
        Ok(())
    }

    /// Trains to `cfg.iterations` and returns every evaluation.
    pub fn run(&mut self) -> Result<&[MetricsRow]> {
        self.run_until(self.cfg.iterations)?;
        Ok(&self.rows)
    }

    /// Evaluates on the held-out split with the bottleneck mode of the most
    /// recent step. Usage statistics cover the whole split.
    pub fn evaluate(&self) -> Result<MetricsRow> {
        let mut model = self.trainer.eval_model(self.cfg.eval_raw);
        let mode = self.trainer.last_bottleneck_mode();
        let fwd = model.forward(&self.test_batch, mode, false)?;
        let task_loss = fwd.loss.task;

        let bits = match self.cfg.task {
            Task::Autoencode => Some(bpd(task_loss, self.cfg.data_dims)),
            Task::Classify => None,
        };
        let (mut pplx, mut used, mut uniform, mut unigram) = (None, None, None, None);
        if let Some(a) = &fwd.assignment {
            let per_head = a
                .head_histograms()
                .iter()
                .map(perplexity)
                .collect::<Result<Vec<_>>>()?;
            pplx = Some(per_head.iter().sum::<f64>() / per_head.len() as f64);
            used = Some(a.head_histograms().iter().map(used_tokens).sum());
            if let Some(b) = bits {
                let dpl = self.cfg.dims_per_latent;
                uniform = Some((0..per_head.len()).fold(b, |acc, _| nelbo_uniform(acc, self.cfg.k, dpl)));
                unigram = Some(per_head.iter().fold(b, |acc, &p| nelbo_unigram(acc, p, dpl)));
            }
        }
        let row = MetricsRow {
            iteration: self.trainer.iteration,
            task_loss,
            bpd: bits,
            perplexity: pplx,
            used_tokens: used,
            nelbo_uniform: uniform,
            nelbo_unigram: unigram,
        };
        let finite = [Some(row.task_loss), row.bpd, row.perplexity, row.nelbo_uniform, row.nelbo_unigram]
            .into_iter()
            .flatten()
            .all(f64::is_finite);
        if !finite {
            return Err(VqError::NonFinite("evaluation metrics"));
        }
        Ok(row)
    }

    pub fn csv(&self) -> String {
        to_csv(&self.rows)
    }

    /// Everything needed to continue this run bit-for-bit.
    pub fn checkpoint(&self) -> Container {
        let t = &self.trainer;
        let mut c = Container::new();
        c.put_bytes("config", self.cfg.to_kv().into_bytes());
        c.put_u64s("trainer/iteration", vec![t.iteration]);
        let s = t.config.schedule;
        c.put_u64s("trainer/schedule", vec![s.m_init, s.m_reestim, s.r_reestim]);
        c.put_u64s("trainer/rng", rng_words(t.rng.state()));
        c.put_vec("model/params", &t.model.flat_params());
        if let Some(bn) = &t.model.batch_norm {
            c.put_vec("model/bn_running_mean", &bn.running_mean);
            c.put_vec("model/bn_running_var", &bn.running_var);
        }
        if let Some(avg) = &t.averaged {
            c.put_vec("averaged/params", &avg.flat_params());
        }
        for (h, ema) in t.ema.iter().enumerate() {
            c.put_vec(format!("ema/{h}/counts"), ema.counts());
            c.put_matrix(format!("ema/{h}/means"), ema.means().clone());
        }
        c.put_u64s(
            "reservoir/meta",
            vec![t.reservoir.capacity() as u64, t.reservoir.seen()],
        );
        c.put_matrix("reservoir/items", t.reservoir.items());
        c.put_bytes("metrics/csv", self.csv().into_bytes());
        c
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Rebuilds a run from a checkpoint. `cfg` may differ from the saved
    /// configuration only in `iterations`.
    pub fn resume(cfg: ExperimentConfig, ckpt: &Container) -> Result<Self> {
        let saved = std::str::from_utf8(ckpt.bytes("config")?)
            .map_err(|_| VqError::Format("checkpoint config is not UTF-8".into()))?;
        let mut saved = ExperimentConfig::from_kv(saved)?;
        saved.iterations = cfg.iterations;
        if saved != cfg {
            return Err(VqError::Config(
                "checkpoint was written under a different configuration".into(),
            ));
        }

        let mut exp = Self::build(cfg, None)?;
        let t = &mut exp.trainer;
        let sched = ckpt.u64s("trainer/schedule")?;
        if sched.len() != 3 {
            return Err(VqError::Format("bad trainer/schedule entry".into()));
        }
        t.config.schedule = TrainSchedule {
            m_init: sched[0],
            m_reestim: sched[1],
            r_reestim: sched[2],
        };
        t.iteration = single(ckpt.u64s("trainer/iteration")?)?;
        t.rng = Rng::from_state(rng_state(ckpt.u64s("trainer/rng")?)?);
        t.model.set_flat_params(&ckpt.vec("model/params")?)?;
        if let Some(bn) = t.model.batch_norm.as_mut() {
            bn.running_mean = ckpt.vec("model/bn_running_mean")?;
            bn.running_var = ckpt.vec("model/bn_running_var")?;
        }
        if let Some(avg) = t.averaged.as_mut() {
            avg.set_flat_params(&ckpt.vec("averaged/params")?)?;
        }
        for h in 0..t.ema.len() {
            let counts = ckpt.vec(&format!("ema/{h}/counts"))?;
            let means = ckpt.matrix(&format!("ema/{h}/means"))?.clone();
            let (discount, pinned) = (t.ema[h].discount(), t.ema[h].is_pinned());
            t.ema[h] = EmaState::from_parts(counts, means, discount, pinned)?;
        }
        let meta = ckpt.u64s("reservoir/meta")?;
        if meta.len() != 2 {
            return Err(VqError::Format("bad reservoir/meta entry".into()));
        }
        let mut items = ckpt.matrix("reservoir/items")?.clone();
        if items.rows() == 0 {
            items = Matrix::zeros(0, t.model.latent_dim());
        }
        t.reservoir = crate::clustering::Reservoir::from_parts(meta[0] as usize, items, meta[1])?;
        let csv = std::str::from_utf8(ckpt.bytes("metrics/csv")?)
            .map_err(|_| VqError::Format("metrics CSV is not UTF-8".into()))?;
        exp.rows = parse_csv(csv)?;
        Ok(exp)
    }

    pub fn resume_from(cfg: ExperimentConfig, path: impl AsRef<Path>) -> Result<Self> {
        Self::resume(cfg, &Container::load(path)?)
    }
}

/// Trains `cfg` to completion and returns its evaluations.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let mut exp = Experiment::new(cfg.clone())?;
    exp.run()?;
    Ok(exp.rows)
}

/// Builds the encoder/decoder pair and codebooks for `cfg`.
pub fn build_model(cfg: &ExperimentConfig, rng: &mut Rng) -> Result<VqModel> {
    let flags = cfg.flags();
    let encoder = MlpStack::new(&[cfg.data_dims, cfg.hidden, cfg.latent_dim], Activation::Tanh, rng)?;
    let task = match cfg.task {
        Task::Autoencode => TaskKind::Autoencode(DiscretizedLikelihoodHead {
            dims: cfg.data_dims,
            levels: cfg.levels,
        }),
        Task::Classify => TaskKind::Classify {
            classes: cfg.effective_components(),
        },
    };
    let out_width = match task {
        TaskKind::Autoencode(head) => head.logits_width(),
        TaskKind::Classify { classes } => classes,
    };
    let decoder = MlpStack::new(&[cfg.latent_dim, cfg.hidden, out_width], Activation::Tanh, rng)?;
    let batch_norm = flags.batch_norm.then(|| BatchNormState {
        momentum: cfg.bn_momentum,
        ..BatchNormState::new(cfg.latent_dim)
    });
    let quantizer = QuantizerConfig {
        gamma_commit: cfg.gamma_commit,
        num_heads: cfg.num_heads,
        init_scale: cfg.init_scale,
    };
    quantizer.validate(cfg.latent_dim)?;
    let codebooks = if flags.bottleneck {
        let d = cfg.latent_dim / cfg.num_heads;
        Some(
            (0..cfg.num_heads)
                .map(|_| init_codebook(cfg.k, d, cfg.init_scale, rng))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    debug_assert!(flags.rule == CodebookRule::Sgd || flags.bottleneck);
    Ok(VqModel {
        encoder,
        batch_norm,
        codebooks,
        decoder,
        task,
        quantizer,
    })
}

fn single(v: &[u64]) -> Result<u64> {
    match v {
        [x] => Ok(*x),
        _ => Err(VqError::Format("expected a single value".into())),
    }
}

fn rng_words(s: RngState) -> Vec<u64> {
    let mut out: Vec<u64> = s
        .seed
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    out.push(s.stream);
    out.push(s.word_pos as u64);
    out.push((s.word_pos >> 64) as u64);
    out
}

fn rng_state(words: &[u64]) -> Result<RngState> {
    if words.len() != 7 {
        return Err(VqError::Format("bad RNG state entry".into()));
    }
    let mut seed = [0u8; 32];
    for (dst, w) in seed.chunks_exact_mut(8).zip(&words[..4]) {
        dst.copy_from_slice(&w.to_le_bytes());
    }
    Ok(RngState {
        seed,
        stream: words[4],
        word_pos: words[5] as u128 | ((words[6] as u128) << 64),
    })
}
