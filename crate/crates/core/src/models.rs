//! Small dense networks with hand-written gradients and the categorical
//! likelihoods that supply the task loss.

use crate::error::{Result, VqError};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Affine layer `y = act(x·W + b)` with `W` of shape `d_in × d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Gaussian weights with standard deviation `1/√d_in`, zero bias.
    pub fn random(d_in: usize, d_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let std = 1.0 / (d_in.max(1) as f64).sqrt();
        Self {
            weights: Matrix::from_fn(d_in, d_out, |_, _| rng.normal() * std),
            bias: vec![0.0; d_out],
            activation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Feed-forward stack of [`Dense`] layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpStack {
    pub layers: Vec<Dense>,
}

/// Inputs and outputs of every layer from one forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Matrix>,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds the input")
    }
}

impl MlpStack {
    /// Hidden layers use `hidden_act`; the last layer is linear.
    pub fn new(sizes: &[usize], hidden_act: Activation, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(VqError::InvalidArgument(
                "an MLP needs at least input and output sizes".into(),
            ));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Identity } else { hidden_act };
                Dense::random(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    /// Single linear layer with identity weights.
    pub fn identity(d: usize) -> Self {
        Self {
            layers: vec![Dense {
                weights: Matrix::identity(d),
                bias: vec![0.0; d],
                activation: Activation::Identity,
            }],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::d_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::d_out)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.input_dim() {
            return Err(VqError::shape("MlpStack::forward", self.input_dim(), x.cols()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let prev = activations.last().expect("input pushed");
            let mut z = prev.matmul(&layer.weights)?;
            z.add_row_vector(&layer.bias)?;
            let act = layer.activation;
            if act != Activation::Identity {
                z = z.map(|v| act.apply(v));
            }
            activations.push(z);
        }
        let out = activations.last().expect("non-empty").clone();
        Ok((out, MlpCache { activations }))
    }

    /// Returns the gradient with respect to the input and per-layer parameter
    /// gradients.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<(Matrix, Vec<DenseGrad>)> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(VqError::MissingCache("MlpStack"));
        }
        grad_out.ensure_same_shape(cache.output(), "MlpStack::backward")?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[i + 1];
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                g = g.zip_map(out, |gv, y| gv * act.derivative_from_output(y))?;
            }
            let input = &cache.activations[i];
            grads.push(DenseGrad {
                weights: input.t_matmul(&g)?,
                bias: g.col_sums(),
            });
            g = g.matmul_t(&layer.weights)?;
        }
        grads.reverse();
        Ok((g, grads))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// Flattens gradients in the same order as [`MlpStack::param_slices`].
pub fn grad_slices(grads: &[DenseGrad]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| [g.weights.data(), g.bias.as_slice()])
        .collect()
}

/// Row-wise log-softmax over consecutive groups of `group` logits.
fn log_softmax_groups(row: &[f64], group: usize, out: &mut [f64]) {
    for (chunk, dst) in row.chunks_exact(group).zip(out.chunks_exact_mut(group)) {
        let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + chunk.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (d, &v) in dst.iter_mut().zip(chunk) {
            *d = v - lse;
        }
    }
}

/// Categorical output over `levels` values for each of `dims` data dimensions.
///
/// The decoder's final layer produces `dims × levels` logits per example,
/// grouped by dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscretizedLikelihoodHead {
    pub dims: usize,
    pub levels: usize,
}

impl DiscretizedLikelihoodHead {
    pub fn logits_width(&self) -> usize {
        self.dims * self.levels
    }

    /// Per-dimension probabilities for one example (`dims × levels`).
    pub fn probabilities(&self, logits_row: &[f64]) -> Matrix {
        let mut lp = vec![0.0; logits_row.len()];
        log_softmax_groups(logits_row, self.levels, &mut lp);
        Matrix::new(self.dims, self.levels, lp.iter().map(|v| v.exp()).collect())
            .expect("logits width")
    }
}

fn check_targets(targets: &[usize], rows: usize, per_row: usize, classes: usize, op: &'static str) -> Result<()> {
    if targets.len() != rows * per_row {
        return Err(VqError::shape(op, rows * per_row, targets.len()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(VqError::IndexOutOfRange {
            what: "output levels",
            index: bad,
            size: classes,
        });
    }
    Ok(())
}

/// Mean over the batch of `−log p(x | q(x))` in nats, where each of the
/// `dims` coordinates is an independent categorical over `levels` values.
///
/// `targets` holds level indices, row-major `n × dims`.
pub fn recon_nll(targets: &[usize], logits: &Matrix, levels: usize) -> Result<f64> {
    Ok(recon_nll_with_grad(targets, logits, levels)?.0)
}

/// [`recon_nll`] together with its gradient with respect to the logits.
pub fn recon_nll_with_grad(targets: &[usize], logits: &Matrix, levels: usize) -> Result<(f64, Matrix)> {
    if levels == 0 || logits.cols() % levels != 0 {
        return Err(VqError::shape("recon_nll", format!("multiple of {levels}"), logits.cols()));
    }
    let dims = logits.cols() / levels;
    grouped_nll(targets, logits, levels, dims, "recon_nll")
}

/// Mean cross-entropy of class labels under `logits` (`n × classes`).
pub fn classify_nll(labels: &[usize], logits: &Matrix) -> Result<f64> {
    Ok(classify_nll_with_grad(labels, logits)?.0)
}

pub fn classify_nll_with_grad(labels: &[usize], logits: &Matrix) -> Result<(f64, Matrix)> {
    let classes = logits.cols();
    grouped_nll(labels, logits, classes, 1, "classify_nll")
}

fn grouped_nll(
    targets: &[usize],
    logits: &Matrix,
    group: usize,
    groups_per_row: usize,
    op: &'static str,
) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    check_targets(targets, n, groups_per_row, group, op)?;
    let inv_n = 1.0 / n.max(1) as f64;
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut total = 0.0;
    let mut lp = vec![0.0; logits.cols()];
    for r in 0..n {
        log_softmax_groups(logits.row(r), group, &mut lp);
        let g = grad.row_mut(r);
        for (k, &t) in targets[r * groups_per_row..(r + 1) * groups_per_row].iter().enumerate() {
            let base = k * group;
            total -= lp[base + t];
            for l in 0..group {
                g[base + l] = lp[base + l].exp() * inv_n;
            }
            g[base + t] -= inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_relative_error};

    #[test]
    fn identity_layer_passes_input() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]);
        let (y, _) = MlpStack::identity(3).forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_zero_latents() {
        let mut rng = Rng::seed_from_u64(0);
        let mut mlp = MlpStack::new(&[4, 5, 2], Activation::Tanh, &mut rng).unwrap();
        for s in mlp.param_slices_mut() {
            s.fill(0.0);
        }
        let (y, _) = mlp.forward(&Matrix::filled(3, 4, 1.3)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shape_mismatch() {
        let mlp = MlpStack::identity(3);
        assert!(mlp.forward(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(21);
        let mlp = MlpStack::new(&[5, 7, 3], Activation::Tanh, &mut rng).unwrap();
        let x = Matrix::from_fn(4, 5, |_, _| rng.normal());
        let target = Matrix::from_fn(4, 3, |_, _| rng.normal());
        // loss = Σ y ⊙ target, so dL/dy = target
        let loss = |m: &MlpStack, x: &Matrix| {
            let (y, _) = m.forward(x).unwrap();
            y.zip_map(&target, |a, b| a * b).unwrap().sum()
        };
        let (_, cache) = mlp.forward(&x).unwrap();
        let (gx, grads) = mlp.backward(&cache, &target).unwrap();

        let fd_x = finite_diff_grad(|xp| loss(&mlp, xp), &x, 1e-5).unwrap();
        assert!(max_relative_error(&gx, &fd_x, 1e-6).unwrap() < 1e-6);

        for (li, g) in grads.iter().enumerate() {
            let fd_w = finite_diff_grad(
                |w| {
                    let mut m = mlp.clone();
                    m.layers[li].weights = w.clone();
                    loss(&m, &x)
                },
                &mlp.layers[li].weights,
                1e-5,
            )
            .unwrap();
            assert!(max_relative_error(&g.weights, &fd_w, 1e-6).unwrap() < 1e-6);
        }
    }

    #[test]
    fn recon_nll_examples() {
        let levels = 16;
        let dims = 3;
        // Point mass on the truth.
        let targets = vec![2, 15, 0];
        let logits = Matrix::from_fn(1, dims * levels, |_, c| {
            if c % levels == targets[c / levels] {
                800.0
            } else {
                0.0
            }
        });
        assert!(recon_nll(&targets, &logits, levels).unwrap() < 1e-12);

        let uniform = Matrix::zeros(2, dims * levels);
        let nll = recon_nll(&[0, 1, 2, 3, 4, 5], &uniform, levels).unwrap();
        assert!((nll - dims as f64 * 16f64.ln()).abs() < 1e-12);

        assert!(recon_nll(&[0, 16, 0], &Matrix::zeros(1, 48), levels).is_err());
    }

    #[test]
    fn recon_nll_matches_scalar_loop() {
        let mut rng = Rng::seed_from_u64(3);
        let (n, dims, levels) = (5, 4, 6);
        let logits = Matrix::from_fn(n, dims * levels, |_, _| 2.0 * rng.normal());
        let targets: Vec<usize> = (0..n * dims).map(|_| rng.below(levels)).collect();
        let mut expected = 0.0;
        for r in 0..n {
            for k in 0..dims {
                let row = &logits.row(r)[k * levels..(k + 1) * levels];
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                expected -= (row[targets[r * dims + k]].exp() / z).ln();
            }
        }
        expected /= n as f64;
        let got = recon_nll(&targets, &logits, levels).unwrap();
        assert!((got - expected).abs() < 1e-12);

        let (_, grad) = recon_nll_with_grad(&targets, &logits, levels).unwrap();
        let fd = finite_diff_grad(|l| recon_nll(&targets, l, levels).unwrap(), &logits, 1e-5).unwrap();
        let err = max_relative_error(&grad, &fd, 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn classify_nll_examples() {
        let logits = Matrix::from_rows(&[[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]]);
        assert!(classify_nll(&[0, 2], &logits).unwrap() < 1e-20);

        let uniform = Matrix::zeros(4, 5);
        let nll = classify_nll(&[0, 1, 2, 4], &uniform).unwrap();
        assert!((nll - 5f64.ln()).abs() < 1e-12);

        assert!(classify_nll(&[3], &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn classify_nll_matches_scalar_loop() {
        let mut rng = Rng::seed_from_u64(4);
        let logits = Matrix::from_fn(6, 4, |_, _| rng.normal());
        let labels: Vec<usize> = (0..6).map(|_| rng.below(4)).collect();
        let expected = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| {
                let z: f64 = logits.row(r).iter().map(|v| v.exp()).sum();
                z.ln() - logits.get(r, y)
            })
            .sum::<f64>()
            / 6.0;
        assert!((classify_nll(&labels, &logits).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn head_probabilities_normalize() {
        let mut rng = Rng::seed_from_u64(5);
        let head = DiscretizedLikelihoodHead { dims: 3, levels: 16 };
        let row: Vec<f64> = (0..head.logits_width()).map(|_| 3.0 * rng.normal()).collect();
        let p = head.probabilities(&row);
        for r in p.row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
