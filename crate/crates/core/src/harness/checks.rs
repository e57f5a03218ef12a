//! Quick invariant and oracle suite behind the `check` command.

use crate::clustering::{kmeanspp_seed, lloyd_with_trace, quantization_cost, Reservoir};
use crate::error::Result;
use crate::models::{Activation, DiscretizedLikelihoodHead, MlpStack};
use crate::numerics::{finite_diff_grad, max_relative_error, richardson_diff_grad, Matrix, Rng};
use crate::quantizer::{
    codebook_grad, init_codebook, nearest_code, perplexity, straight_through_backward, used_tokens,
    Codebook, QuantizerConfig,
};
use crate::trainer::{
    batchnorm_backward, batchnorm_forward, ema_codebook_update, sgd_codebook_update, Batch,
    BatchNormState, BottleneckMode, EmaState, OptimConfig, TaskKind, VqModel,
};

use super::metrics::{nelbo_uniform, nelbo_unigram};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// `(bpd, perplexity, uniform, unigram)` for K=4096 and 128 dims per latent.
pub const NELBO_TABLE: [(f64, f64, f64, f64); 6] = [
    (0.213, 322.0, 0.307, 0.278),
    (0.216, 260.0, 0.309, 0.278),
    (0.212, 432.0, 0.306, 0.281),
    (0.207, 1118.0, 0.301, 0.287),
    (0.200, 2388.0, 0.294, 0.288),
    (0.200, 2446.0, 0.294, 0.288),
];

pub fn run_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::seed_from_u64(seed);
    Ok(vec![
        ema_sgd_check(&mut rng)?,
        nelbo_check(),
        commitment_grad_check(&mut rng)?,
        codebook_grad_check(&mut rng)?,
        batchnorm_grad_check(&mut rng)?,
        model_grad_check(&mut rng)?,
        quantizer_invariant_check(&mut rng)?,
        reservoir_check(&mut rng)?,
        seeding_check(&mut rng)?,
        lloyd_check(&mut rng)?,
    ])
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Pinned-count EMA with discount 0.9 against SGD with per-sample step 0.05,
/// one latent per codeword each step.
pub fn ema_sgd_max_diff(steps: usize, rng: &mut Rng) -> Result<f64> {
    let (k, d, discount) = (8, 4, 0.9);
    let init = init_codebook(k, d, 1.0, rng)?;
    let (mut by_ema, mut by_sgd) = (init.clone(), init);
    let mut ema = EmaState::with_pinned_counts(&by_ema, discount)?;
    // codebook_grad averages over the batch, so the step is scaled by n.
    let optim = OptimConfig {
        lr: (1.0 - discount) / 2.0 * k as f64,
        codebook_lr_mult: 1.0,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let latents = random_matrix(k, d, rng);
        let mut indices: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut indices);
        ema_codebook_update(&mut ema, &latents, &indices, &mut by_ema)?;
        let g = codebook_grad(&latents, &indices, &by_sgd)?;
        sgd_codebook_update(&mut by_sgd, &g, &optim)?;
        worst = worst.max(by_ema.words().max_abs_diff(by_sgd.words())?);
    }
    Ok(worst)
}

fn ema_sgd_check(rng: &mut Rng) -> Result<CheckResult> {
    let diff = ema_sgd_max_diff(100, rng)?;
    Ok(result(
        "ema_matches_sgd",
        diff <= 1e-10,
        format!("max codeword difference {diff:.3e} over 100 steps"),
    ))
}

fn nelbo_check() -> CheckResult {
    let worst = NELBO_TABLE
        .iter()
        .map(|&(b, p, u, g)| {
            let du = (nelbo_uniform(b, 4096, 128.0) - u).abs();
            let dg = (nelbo_unigram(b, p, 128.0) - g).abs();
            du.max(dg)
        })
        .fold(0.0, f64::max);
    result(
        "nelbo_table",
        worst <= 1e-3,
        format!("max deviation {worst:.4} bits/dim over {} rows", NELBO_TABLE.len()),
    )
}

const FD_EPS: f64 = 1e-5;
/// Step for the extrapolated differences used on non-quadratic losses.
const RICHARDSON_EPS: f64 = 5e-5;
const FD_FLOOR: f64 = 1e-4;
const FD_TOL: f64 = 1e-6;
const FD_CASES: usize = 20;

fn grad_result(name: &'static str, worst: f64) -> CheckResult {
    result(
        name,
        worst <= FD_TOL,
        format!("max relative error {worst:.2e} over {FD_CASES} cases"),
    )
}

fn commitment_grad_check(rng: &mut Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..FD_CASES {
        let (n, d, gamma) = (1 + rng.below(8), 1 + rng.below(6), rng.uniform());
        let e = random_matrix(n, d, rng);
        let q = random_matrix(n, d, rng);
        let upstream = random_matrix(n, d, rng);
        let analytic = straight_through_backward(&upstream, &e, &q, gamma)?;
        let numeric = finite_diff_grad(
            |x| {
                let lin: f64 = x.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum();
                lin + gamma * x.sub(&q).expect("same shape").sq_norm() / n as f64
            },
            &e,
            FD_EPS,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric, FD_FLOOR)?);
    }
    Ok(grad_result("commitment_gradient", worst))
}

fn codebook_grad_check(rng: &mut Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..FD_CASES {
        let (n, k, d) = (1 + rng.below(8), 1 + rng.below(6), 1 + rng.below(5));
        let e = random_matrix(n, d, rng);
        let cb = Codebook::new(random_matrix(k, d, rng))?;
        let idx: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let analytic = codebook_grad(&e, &idx, &cb)?;
        let numeric = finite_diff_grad(
            |w| {
                let mut s = 0.0;
                for (j, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        let diff = e.get(j, c) - w.get(i, c);
                        s += diff * diff;
                    }
                }
                s / n as f64
            },
            cb.words(),
            FD_EPS,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric, FD_FLOOR)?);
    }
    Ok(grad_result("codebook_gradient", worst))
}

fn batchnorm_grad_check(rng: &mut Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..FD_CASES {
        let (n, d) = (2 + rng.below(7), 1 + rng.below(6));
        let x = random_matrix(n, d, rng);
        let upstream = random_matrix(n, d, rng);
        let mut state = BatchNormState::new(d);
        for i in 0..d {
            state.gain[i] = 0.5 + rng.uniform();
            state.bias[i] = rng.normal();
        }
        let (_, cache) = batchnorm_forward(&x, &mut state.clone(), true)?;
        let (analytic, _, _) = batchnorm_backward(&upstream, cache.as_ref())?;
        let numeric = richardson_diff_grad(
            |z| {
                let (y, _) = batchnorm_forward(z, &mut state.clone(), true).expect("valid batch");
                y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
            },
            &x,
            RICHARDSON_EPS,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric, FD_FLOOR)?);
    }
    Ok(grad_result("batchnorm_gradient", worst))
}

/// A small random model with batch norm and one codebook.
pub fn small_model(dims: usize, latent: usize, levels: usize, rng: &mut Rng) -> Result<VqModel> {
    let head = DiscretizedLikelihoodHead { dims, levels };
    Ok(VqModel {
        encoder: MlpStack::new(&[dims, 5, latent], Activation::Tanh, rng)?,
        batch_norm: Some(BatchNormState::new(latent)),
        codebooks: Some(vec![init_codebook(4, latent, 1.0, rng)?]),
        decoder: MlpStack::new(&[latent, 5, head.logits_width()], Activation::Tanh, rng)?,
        task: TaskKind::Autoencode(head),
        quantizer: QuantizerConfig::default(),
    })
}

/// Relative error between the analytic warm-up gradient of a random small
/// model and central differences over every parameter.
pub fn model_grad_error(rng: &mut Rng) -> Result<f64> {
    let (dims, latent, levels, n) = (2 + rng.below(3), 2 + rng.below(3), 3, 2 + rng.below(5));
    let model = small_model(dims, latent, levels, rng)?;
    let batch = Batch {
        inputs: random_matrix(n, dims, rng),
        targets: (0..n * dims).map(|_| rng.below(levels)).collect(),
    };
    let fwd = model.clone().forward(&batch, BottleneckMode::PassThrough, true)?;
    let analytic = model.full_backward(&fwd, 1.0)?.flat();
    let params = model.flat_params();
    let p = params.len();
    let numeric = richardson_diff_grad(
        |x| {
            let mut m = model.clone();
            m.set_flat_params(x.data()).expect("same length");
            m.forward(&batch, BottleneckMode::PassThrough, true)
                .expect("finite forward")
                .loss
                .total
        },
        &Matrix::new(1, p, params)?,
        RICHARDSON_EPS,
    )?;
    max_relative_error(&Matrix::new(1, p, analytic)?, &numeric, FD_FLOOR)
}

fn model_grad_check(rng: &mut Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..FD_CASES {
        worst = worst.max(model_grad_error(rng)?);
    }
    Ok(grad_result("model_gradient_warmup", worst))
}

fn quantizer_invariant_check(rng: &mut Rng) -> Result<CheckResult> {
    let cases = 200;
    let mut failures = 0;
    for _ in 0..cases {
        let (n, k, d) = (1 + rng.below(32), 1 + rng.below(16), 1 + rng.below(6));
        let e = random_matrix(n, d, rng);
        let cb = Codebook::new(random_matrix(k, d, rng))?;
        let a = nearest_code(&e, &cb)?;
        let q = cb.words().select_rows(a.indices())?;
        let again = nearest_code(&q, &cb)?;
        let mut ok = again.indices() == a.indices();
        for j in 0..n {
            let best = crate::numerics::sq_dist(e.row(j), cb.word(a.index(j, 0)));
            ok &= (0..k).all(|i| best <= crate::numerics::sq_dist(e.row(j), cb.word(i)));
        }
        let h = a.histogram();
        let p = perplexity(&h)?;
        ok &= (1.0..=k as f64).contains(&p) && used_tokens(&h) as f64 >= p.ceil() - 1e-9;
        failures += usize::from(!ok);
    }
    Ok(result(
        "quantizer_invariants",
        failures == 0,
        format!("{failures} of {cases} random cases violated an invariant"),
    ))
}

fn reservoir_check(rng: &mut Rng) -> Result<CheckResult> {
    let (cap, stream, trials) = (4usize, 16usize, 20_000usize);
    let mut hits = vec![0u64; stream];
    let items = Matrix::from_fn(stream, 1, |i, _| i as f64);
    for _ in 0..trials {
        let mut r = Reservoir::new(cap, 1);
        r.update(&items, rng)?;
        for v in r.items().data() {
            hits[*v as usize] += 1;
        }
    }
    let expected = (trials * cap) as f64 / stream as f64;
    let chi2: f64 = hits.iter().map(|&h| (h as f64 - expected).powi(2) / expected).sum();
    // Wilson-Hilferty upper 0.001 quantile.
    let dof = (stream - 1) as f64;
    let z = 3.090_232;
    let crit = dof * (1.0 - 2.0 / (9.0 * dof) + z * (2.0 / (9.0 * dof)).sqrt()).powi(3);
    Ok(result(
        "reservoir_uniformity",
        chi2 < crit,
        format!("chi-square {chi2:.2} vs critical {crit:.2} ({dof} dof)"),
    ))
}

/// Points around 16 well-separated centers in 2-D.
pub fn mixture_points(per: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(16 * per, 2, |r, c| {
        let comp = r / per;
        let center = if c == 0 { (comp % 4) as f64 } else { (comp / 4) as f64 } * 10.0;
        center + 0.3 * rng.normal()
    })
}

fn seeding_check(rng: &mut Rng) -> Result<CheckResult> {
    let mut pp = Vec::new();
    let mut uni = Vec::new();
    for _ in 0..20 {
        let pts = mixture_points(30, rng);
        pp.push(quantization_cost(&pts, &kmeanspp_seed(&pts, 16, rng)?));
        let mut idx: Vec<usize> = (0..pts.rows()).collect();
        rng.shuffle(&mut idx);
        uni.push(quantization_cost(&pts, &pts.select_rows(&idx[..16])?));
    }
    let (a, b) = (median(&mut pp), median(&mut uni));
    Ok(result(
        "kmeanspp_seeding",
        a <= b,
        format!("median cost {a:.2} with k-means++ vs {b:.2} uniform"),
    ))
}

fn lloyd_check(rng: &mut Rng) -> Result<CheckResult> {
    let mut bad = 0;
    for _ in 0..20 {
        let pts = mixture_points(10, rng);
        let k = 2 + rng.below(20);
        let init = kmeanspp_seed(&pts, k, rng)?;
        let report = lloyd_with_trace(&pts, &init, 25, 0.0)?;
        bad += report
            .costs
            .windows(2)
            .filter(|w| w[1] > w[0] * (1.0 + 1e-12))
            .count();
    }
    Ok(result(
        "lloyd_monotone",
        bad == 0,
        format!("{bad} cost increases over 20 instances"),
    ))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
