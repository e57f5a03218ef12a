//! Experiment configuration and the method presets.
//!
//! Configuration files are plain text, one `key = value` per line; `#`
//! starts a comment and blank lines are ignored. Keys are the field names
//! of [`ExperimentConfig`] (see [`ExperimentConfig::KEYS`]); unknown keys
//! are an error. Every key is also a CLI flag (`--key-name`), and flags
//! override file values.
//!
//! | method          | bottleneck | batch norm | codebook rule | codebook LR mult | reestimation |
//! |-----------------|------------|------------|---------------|------------------|--------------|
//! | `vanilla`       | yes        | no         | SGD           | 1                | no           |
//! | `bn`            | yes        | yes        | SGD           | 1                | no           |
//! | `bn_lr`         | yes        | yes        | SGD           | `codebook_lr_mult` | no         |
//! | `bn_ema`        | yes        | yes        | EMA           | n/a              | no           |
//! | `bn_reest`      | yes        | yes        | SGD           | 1                | yes          |
//! | `bn_reest_lr`   | yes        | yes        | SGD           | `codebook_lr_mult` | yes        |
//! | `no_bottleneck` | no         | no         | n/a           | n/a              | no           |
//!
//! Warm-up (`m_init`) and the reestimation window only apply to the
//! reestimation presets; the others quantize from the first iteration.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, VqError};
use crate::trainer::CodebookRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Vanilla,
    Bn,
    BnLr,
    BnEma,
    BnReest,
    BnReestLr,
    NoBottleneck,
}

/// Trainer switches a preset turns on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MethodFlags {
    pub bottleneck: bool,
    pub batch_norm: bool,
    pub rule: CodebookRule,
    pub scaled_codebook_lr: bool,
    pub reestimate: bool,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Vanilla,
        Method::Bn,
        Method::BnLr,
        Method::BnEma,
        Method::BnReest,
        Method::BnReestLr,
        Method::NoBottleneck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Bn => "bn",
            Method::BnLr => "bn_lr",
            Method::BnEma => "bn_ema",
            Method::BnReest => "bn_reest",
            Method::BnReestLr => "bn_reest_lr",
            Method::NoBottleneck => "no_bottleneck",
        }
    }

    pub fn flags(self) -> MethodFlags {
        let quant = |batch_norm, rule, scaled_codebook_lr, reestimate| MethodFlags {
            bottleneck: true,
            batch_norm,
            rule,
            scaled_codebook_lr,
            reestimate,
        };
        use CodebookRule::*;
        match self {
            Method::Vanilla => quant(false, Sgd, false, false),
            Method::Bn => quant(true, Sgd, false, false),
            Method::BnLr => quant(true, Sgd, true, false),
            Method::BnEma => quant(true, Ema, false, false),
            Method::BnReest => quant(true, Sgd, false, true),
            Method::BnReestLr => quant(true, Sgd, true, true),
            Method::NoBottleneck => MethodFlags {
                bottleneck: false,
                batch_norm: false,
                rule: Sgd,
                scaled_codebook_lr: false,
                reestimate: false,
            },
        }
    }

    /// Inverse of [`Method::flags`].
    pub fn from_flags(flags: MethodFlags) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.flags() == flags)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = VqError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                VqError::Config(format!("unknown method `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Autoencode,
    Classify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Autoencode => "autoencode",
            Task::Classify => "classify",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = VqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "autoencode" => Ok(Task::Autoencode),
            "classify" => Ok(Task::Classify),
            _ => Err(VqError::Config(format!(
                "unknown task `{s}` (expected autoencode or classify)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub task: Task,
    /// Codewords per head.
    pub k: usize,
    /// Encoder output width, split evenly across heads.
    pub latent_dim: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub m_init: u64,
    pub m_reestim: u64,
    pub r_reestim: u64,
    pub lr: f64,
    pub codebook_lr_mult: f64,
    pub gamma_commit: f64,
    pub ema_discount: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub iterations: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    /// Discrete output levels per data dimension.
    pub levels: usize,
    /// Mixture components in the synthetic data; 0 picks `max(K/4, 2)`.
    pub components: usize,
    pub data_dims: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Data dimensions one latent vector accounts for, for the NELBO columns.
    pub dims_per_latent: f64,
    /// 0 picks `64 × K`.
    pub reservoir_capacity: usize,
    pub lloyd_iters: usize,
    /// 0 disables Polyak averaging.
    pub polyak_decay: f64,
    /// Evaluate the live parameters even when averaging is on.
    pub eval_raw: bool,
    pub bn_momentum: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::BnReestLr,
            task: Task::Autoencode,
            k: 64,
            latent_dim: 8,
            num_heads: 1,
            hidden: 64,
            m_init: 200,
            m_reestim: 1000,
            r_reestim: 100,
            lr: 0.05,
            codebook_lr_mult: 10.0,
            gamma_commit: 0.25,
            ema_discount: 0.99,
            init_scale: 1.0,
            seed: 0,
            iterations: 2000,
            eval_every: 100,
            batch_size: 64,
            levels: 16,
            components: 0,
            data_dims: 16,
            train_size: 4096,
            test_size: 1024,
            dims_per_latent: 16.0,
            reservoir_capacity: 0,
            lloyd_iters: crate::clustering::DEFAULT_LLOYD_ITERS,
            polyak_decay: 0.0,
            eval_raw: false,
            bn_momentum: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 29] = [
        "method",
        "task",
        "k",
        "latent_dim",
        "num_heads",
        "hidden",
        "m_init",
        "m_reestim",
        "r_reestim",
        "lr",
        "codebook_lr_mult",
        "gamma_commit",
        "ema_discount",
        "init_scale",
        "seed",
        "iterations",
        "eval_every",
        "batch_size",
        "levels",
        "components",
        "data_dims",
        "train_size",
        "test_size",
        "dims_per_latent",
        "reservoir_capacity",
        "lloyd_iters",
        "polyak_decay",
        "eval_raw",
        "bn_momentum",
    ];

    /// Ablation default with `method` and `seed`.
    pub fn preset(method: Method, seed: u64) -> Self {
        Self {
            method,
            seed,
            ..Self::default()
        }
    }

    /// Four heads of 16 codewords each.
    pub fn multihead(method: Method, seed: u64) -> Self {
        Self {
            k: 16,
            num_heads: 4,
            latent_dim: 8,
            ..Self::preset(method, seed)
        }
    }

    pub fn flags(&self) -> MethodFlags {
        self.method.flags()
    }

    pub fn effective_components(&self) -> usize {
        if self.components > 0 {
            self.components
        } else {
            (self.k / 4).max(2)
        }
    }

    pub fn effective_reservoir_capacity(&self) -> usize {
        if self.reservoir_capacity > 0 {
            self.reservoir_capacity
        } else {
            64 * self.k
        }
    }

    /// Codebook step multiplier actually applied under this preset.
    pub fn effective_codebook_lr_mult(&self) -> f64 {
        if self.flags().scaled_codebook_lr {
            self.codebook_lr_mult
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("latent_dim", self.latent_dim),
            ("num_heads", self.num_heads),
            ("hidden", self.hidden),
            ("levels", self.levels),
            ("data_dims", self.data_dims),
            ("train_size", self.train_size),
            ("test_size", self.test_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(VqError::Config(format!("{name} must be positive")));
            }
        }
        if self.batch_size < 2 {
            return Err(VqError::Config("batch_size must be at least 2".into()));
        }
        if self.latent_dim % self.num_heads != 0 {
            return Err(VqError::Config(format!(
                "num_heads = {} must divide latent_dim = {}",
                self.num_heads, self.latent_dim
            )));
        }
        if self.eval_every == 0 || self.r_reestim == 0 {
            return Err(VqError::Config("eval_every and r_reestim must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.codebook_lr_mult > 0.0) || !(self.init_scale > 0.0) {
            return Err(VqError::Config("lr, codebook_lr_mult and init_scale must be positive".into()));
        }
        if !(self.gamma_commit >= 0.0) {
            return Err(VqError::Config("gamma_commit must be nonnegative".into()));
        }
        if !(self.ema_discount > 0.0 && self.ema_discount < 1.0) {
            return Err(VqError::Config("ema_discount must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.polyak_decay) {
            return Err(VqError::Config("polyak_decay must lie in [0, 1)".into()));
        }
        if !(self.dims_per_latent > 0.0) {
            return Err(VqError::Config("dims_per_latent must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(VqError::Config("bn_momentum must lie in (0, 1]".into()));
        }
        if self.flags().reestimate {
            let warm_samples = (self.m_init.max(1) as usize).saturating_mul(self.batch_size);
            let held = warm_samples.min(self.effective_reservoir_capacity());
            if held < self.k {
                return Err(VqError::Config(format!(
                    "reestimation needs at least K = {} reservoir samples by the first rebuild; \
                     warm-up and reservoir_capacity provide {held}",
                    self.k
                )));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| VqError::Config(format!("invalid value `{value}` for `{key}`")))
        }
        let v = value.trim();
        match key {
            "method" => self.method = v.parse()?,
            "task" => self.task = v.parse()?,
            "k" => self.k = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "num_heads" => self.num_heads = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "m_init" => self.m_init = parse(key, v)?,
            "m_reestim" => self.m_reestim = parse(key, v)?,
            "r_reestim" => self.r_reestim = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "codebook_lr_mult" => self.codebook_lr_mult = parse(key, v)?,
            "gamma_commit" => self.gamma_commit = parse(key, v)?,
            "ema_discount" => self.ema_discount = parse(key, v)?,
            "init_scale" => self.init_scale = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "levels" => self.levels = parse(key, v)?,
            "components" => self.components = parse(key, v)?,
            "data_dims" => self.data_dims = parse(key, v)?,
            "train_size" => self.train_size = parse(key, v)?,
            "test_size" => self.test_size = parse(key, v)?,
            "dims_per_latent" => self.dims_per_latent = parse(key, v)?,
            "reservoir_capacity" => self.reservoir_capacity = parse(key, v)?,
            "lloyd_iters" => self.lloyd_iters = parse(key, v)?,
            "polyak_decay" => self.polyak_decay = parse(key, v)?,
            "eval_raw" => self.eval_raw = parse(key, v)?,
            "bn_momentum" => self.bn_momentum = parse(key, v)?,
            _ => return Err(VqError::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "method" => self.method.to_string(),
            "task" => self.task.to_string(),
            "k" => self.k.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "num_heads" => self.num_heads.to_string(),
            "hidden" => self.hidden.to_string(),
            "m_init" => self.m_init.to_string(),
            "m_reestim" => self.m_reestim.to_string(),
            "r_reestim" => self.r_reestim.to_string(),
            "lr" => self.lr.to_string(),
            "codebook_lr_mult" => self.codebook_lr_mult.to_string(),
            "gamma_commit" => self.gamma_commit.to_string(),
            "ema_discount" => self.ema_discount.to_string(),
            "init_scale" => self.init_scale.to_string(),
            "seed" => self.seed.to_string(),
            "iterations" => self.iterations.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "levels" => self.levels.to_string(),
            "components" => self.components.to_string(),
            "data_dims" => self.data_dims.to_string(),
            "train_size" => self.train_size.to_string(),
            "test_size" => self.test_size.to_string(),
            "dims_per_latent" => self.dims_per_latent.to_string(),
            "reservoir_capacity" => self.reservoir_capacity.to_string(),
            "lloyd_iters" => self.lloyd_iters.to_string(),
            "polyak_decay" => self.polyak_decay.to_string(),
            "eval_raw" => self.eval_raw.to_string(),
            "bn_momentum" => self.bn_momentum.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                VqError::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Every key in [`ExperimentConfig::KEYS`] order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("listed key"));
            out.push('\n');
        }
        out
    }
}
