//! Codebook initialization-scale sweep and ablation batches.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Result, VqError};
use crate::numerics::Rng;
use crate::quantizer::init_codebook;

use super::config::{ExperimentConfig, Method};
use super::experiment::Experiment;
use super::metrics::MetricsRow;

pub const SWEEP_SCALES: [f64; 6] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];
pub const SWEEP_CSV_HEADER: &str = "scale,used_tokens,task_loss";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// Relative scale.
    pub scale: f64,
    /// Absolute standard deviation the codebook was drawn with.
    pub init_scale: f64,
    pub used_tokens: usize,
    pub task_loss: f64,
}

/// For each scale `s`: train `cfg.m_init` unquantized steps, measure the RMS
/// of encoder outputs on the training split, draw codebooks with standard
/// deviation `s * rms`, then train to `cfg.iterations` and evaluate.
///
/// Every scale starts from the same seed, so runs differ only in the
/// codebook scale.
pub fn scaling_sweep(scales: &[f64], cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let flags = cfg.flags();
    if !flags.bottleneck || flags.reestimate {
        return Err(VqError::Config(format!(
            "the scaling sweep needs a quantizing method without reestimation, got {}",
            cfg.method
        )));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(VqError::Config(format!("sweep scales must be positive, got {s}")));
    }
    scales.iter().map(|&s| sweep_point(s, cfg)).collect()
}

fn sweep_point(scale: f64, cfg: &ExperimentConfig) -> Result<SweepRow> {
    let mut exp = Experiment::with_warmup(cfg.clone(), cfg.m_init)?;
    exp.run_until(cfg.m_init)?;

    let inputs = exp.data().train.inputs.clone();
    let trainer = exp.trainer_mut();
    let latents = trainer.model.encode(&inputs, false)?.latents;
    let init_scale = scale * latents.rms();
    let heads = cfg.num_heads;
    let d = cfg.latent_dim / heads;
    let mut rng = Rng::seed_from_u64(cfg.seed ^ scale.to_bits());
    let codebooks = (0..heads)
        .map(|_| init_codebook(cfg.k, d, init_scale, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    trainer.set_codebooks(codebooks)?;

    exp.run_until(cfg.iterations)?;
    let row = exp.evaluate()?;
    Ok(SweepRow {
        scale,
        init_scale,
        used_tokens: row.used_tokens.unwrap_or(0),
        task_loss: row.task_loss,
    })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.scale, r.used_tokens, r.task_loss));
    }
    out
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl AblationRun {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

/// Runs every `(method, seed)` pair on `base`, spread over `threads`
/// workers. Results come back in `methods` × `seeds` order.
pub fn run_ablation(
    base: &ExperimentConfig,
    methods: &[Method],
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<AblationRun>> {
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<AblationRun>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(method, seed)) = jobs.get(i) else { break };
                let cfg = ExperimentConfig {
                    method,
                    seed,
                    ..base.clone()
                };
                let res = Experiment::new(cfg).and_then(|mut e| {
                    e.run()?;
                    Ok(AblationRun {
                        method,
                        seed,
                        rows: e.rows().to_vec(),
                    })
                });
                results.lock().expect("result lock")[i] = Some(res);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Median of the final-evaluation value picked by `metric` for one method.
pub fn median_final(runs: &[AblationRun], method: Method, metric: impl Fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
    let mut v: Vec<f64> = runs
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.last().and_then(&metric))
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// One line per run: method, seed, then the final metrics row.
pub fn ablation_summary(runs: &[AblationRun]) -> String {
    let mut out = format!("method,seed,{}\n", super::metrics::CSV_HEADER);
    for r in runs {
        if let Some(last) = r.last() {
            out.push_str(&format!("{},{},{}\n", r.method, r.seed, last.to_csv_line()));
        }
    }
    out
}
