use crate::error::{Result, VqError};
use crate::numerics::Matrix;

/// Per-dimension batch normalization state.
///
/// `momentum` is the weight of the current batch when refreshing the
/// running statistics: `running ← (1 − momentum)·running + momentum·batch`.
/// The running variance tracks the unbiased batch variance; normalization in
/// training mode uses the biased one.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }
}

/// Quantities from a training-mode forward pass needed by the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    gain: Vec<f64>,
}

/// Normalizes `x` per column, then applies `gain` and `bias`.
///
/// Training mode uses batch statistics, refreshes the running ones and
/// returns a cache for [`batchnorm_backward`]; eval mode uses the running
/// statistics and returns no cache.
pub fn batchnorm_forward(
    x: &Matrix,
    state: &mut BatchNormState,
    training: bool,
) -> Result<(Matrix, Option<BatchNormCache>)> {
    let d = state.dim();
    if x.cols() != d {
        return Err(VqError::shape("batchnorm_forward", d, x.cols()));
    }
    let n = x.rows();
    let (mean, var) = if training {
        if n < 2 {
            return Err(VqError::InvalidArgument(format!(
                "batch normalization in training mode needs at least 2 rows, got {n}"
            )));
        }
        let mean: Vec<f64> = x.col_sums().iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; d];
        for row in x.row_iter() {
            for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
                let c = xv - m;
                *v += c * c;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);

        let unbias = n as f64 / (n as f64 - 1.0);
        let mo = state.momentum;
        for j in 0..d {
            state.running_mean[j] = (1.0 - mo) * state.running_mean[j] + mo * mean[j];
            state.running_var[j] = (1.0 - mo) * state.running_var[j] + mo * var[j] * unbias;
        }
        (mean, var)
    } else {
        (state.running_mean.clone(), state.running_var.clone())
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
    let normalized = Matrix::from_fn(n, d, |r, c| (x.get(r, c) - mean[c]) * inv_std[c]);
    let out = Matrix::from_fn(n, d, |r, c| state.gain[c] * normalized.get(r, c) + state.bias[c]);
    let cache = training.then(|| BatchNormCache {
        normalized,
        inv_std,
        gain: state.gain.clone(),
    });
    Ok((out, cache))
}

/// Exact gradients of the training-mode forward pass:
/// `(grad_in, grad_gain, grad_bias)`.
pub fn batchnorm_backward(
    grad_out: &Matrix,
    cache: Option<&BatchNormCache>,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let cache = cache.ok_or(VqError::MissingCache("batch normalization"))?;
    grad_out.ensure_same_shape(&cache.normalized, "batchnorm_backward")?;
    let (n, d) = grad_out.shape();
    let nf = n as f64;

    let grad_bias = grad_out.col_sums();
    let mut grad_gain = vec![0.0; d];
    for (g_row, x_row) in grad_out.row_iter().zip(cache.normalized.row_iter()) {
        for ((gg, &g), &xh) in grad_gain.iter_mut().zip(g_row).zip(x_row) {
            *gg += g * xh;
        }
    }

    // dx = gain·inv_std/n · (n·g − Σg − x̂·Σ(g·x̂))
    let grad_in = Matrix::from_fn(n, d, |r, c| {
        let g = grad_out.get(r, c);
        let xh = cache.normalized.get(r, c);
        cache.gain[c] * cache.inv_std[c] / nf * (nf * g - grad_bias[c] - xh * grad_gain[c])
    });
    Ok((grad_in, grad_gain, grad_bias))
}
