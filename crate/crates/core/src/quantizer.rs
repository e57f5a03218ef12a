//! The VQ bottleneck: codebooks, nearest-codeword assignment, the VQ loss
//! and its gradients, and codebook usage statistics.
//!
//! Loss terms use batch means. For a batch of `n` latents `e` quantized to
//! `q` the auxiliary terms are
//!
//! ```text
//! codebook   = (1/n) Σ ‖sg[e] − q‖²
//! commitment = γ (1/n) Σ ‖e − sg[q]‖²
//! ```
//!
//! so in the forward pass both are the same distortion, and they differ only
//! in which side receives the gradient.

use crate::error::{Result, VqError};
use crate::numerics::{Matrix, Rng};

/// `K` codewords of dimension `d`, stored as a `K×d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    words: Matrix,
}

impl Codebook {
    pub fn new(words: Matrix) -> Result<Self> {
        if words.rows() == 0 || words.cols() == 0 {
            return Err(VqError::InvalidArgument(format!(
                "codebook must have K >= 1 and d >= 1, got {}x{}",
                words.rows(),
                words.cols()
            )));
        }
        if !words.is_finite() {
            return Err(VqError::NonFinite("Codebook::new"));
        }
        Ok(Self { words })
    }

    /// Number of codewords `K`.
    pub fn size(&self) -> usize {
        self.words.rows()
    }

    /// Codeword dimension `d`.
    pub fn dim(&self) -> usize {
        self.words.cols()
    }

    pub fn words(&self) -> &Matrix {
        &self.words
    }

    pub fn words_mut(&mut self) -> &mut Matrix {
        &mut self.words
    }

    pub fn word(&self, i: usize) -> &[f64] {
        self.words.row(i)
    }

    /// Information carried by one quantized vector, `log₂ K` bits.
    pub fn capacity_bits(&self) -> f64 {
        (self.size() as f64).log2()
    }

    /// Replaces all codewords at once (used by reestimation).
    pub fn replace(&mut self, words: Matrix) -> Result<()> {
        words.ensure_same_shape(&self.words, "Codebook::replace")?;
        if !words.is_finite() {
            return Err(VqError::NonFinite("Codebook::replace"));
        }
        self.words = words;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizerConfig {
    /// Weight of the commitment term.
    pub gamma_commit: f64,
    pub num_heads: usize,
    /// Multiplier on the standard-normal codeword initialization.
    pub init_scale: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            gamma_commit: 0.25,
            num_heads: 1,
            init_scale: 1.0,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        if self.num_heads == 0 || latent_dim % self.num_heads != 0 {
            return Err(VqError::Config(format!(
                "num_heads = {} must divide the latent dimension {}",
                self.num_heads, latent_dim
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(VqError::Config(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        if !(self.gamma_commit >= 0.0 && self.gamma_commit.is_finite()) {
            return Err(VqError::Config(format!(
                "gamma_commit must be nonnegative, got {}",
                self.gamma_commit
            )));
        }
        Ok(())
    }
}

/// How often each codeword was selected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UsageHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl UsageHistogram {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![0; k],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn record(&mut self, index: usize) {
        self.counts[index] += 1;
        self.total += 1;
    }

    /// Adds another histogram over the same `K` into this one.
    pub fn merge(&mut self, other: &UsageHistogram) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(VqError::shape(
                "UsageHistogram::merge",
                self.counts.len(),
                other.counts.len(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn num_codes(&self) -> usize {
        self.counts.len()
    }
}

/// Result of quantizing a batch: the chosen codeword per row and head.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Row-major `n × num_heads`.
    indices: Vec<usize>,
    num_heads: usize,
    histograms: Vec<UsageHistogram>,
}

impl Assignment {
    pub fn num_rows(&self) -> usize {
        if self.num_heads == 0 {
            0
        } else {
            self.indices.len() / self.num_heads
        }
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn index(&self, row: usize, head: usize) -> usize {
        self.indices[row * self.num_heads + head]
    }

    /// All indices, row-major `n × num_heads`.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Indices chosen by one head, one per row.
    pub fn head_indices(&self, head: usize) -> Vec<usize> {
        self.indices
            .iter()
            .skip(head)
            .step_by(self.num_heads)
            .copied()
            .collect()
    }

    pub fn head_histogram(&self, head: usize) -> &UsageHistogram {
        &self.histograms[head]
    }

    pub fn head_histograms(&self) -> &[UsageHistogram] {
        &self.histograms
    }

    /// Usage summed over heads; totals `n × num_heads`.
    pub fn histogram(&self) -> UsageHistogram {
        let mut out = UsageHistogram::new(self.histograms[0].num_codes());
        for h in &self.histograms {
            out.merge(h).expect("heads share K");
        }
        out
    }
}

/// Nearest codeword for every row of `latents`, lowest index on ties.
pub fn nearest_code(latents: &Matrix, codebook: &Codebook) -> Result<Assignment> {
    if latents.cols() != codebook.dim() {
        return Err(VqError::shape("nearest_code", codebook.dim(), latents.cols()));
    }
    let mut histogram = UsageHistogram::new(codebook.size());
    let mut indices = Vec::with_capacity(latents.rows());
    for row in latents.row_iter() {
        let best = nearest_row(row, codebook.words());
        histogram.record(best);
        indices.push(best);
    }
    Ok(Assignment {
        indices,
        num_heads: 1,
        histograms: vec![histogram],
    })
}

pub(crate) fn nearest_row(v: &[f64], words: &Matrix) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (j, w) in words.row_iter().enumerate() {
        let dist = crate::numerics::sq_dist(v, w);
        // Strict comparison keeps the lowest index on ties.
        if dist < best_dist {
            best_dist = dist;
            best = j;
        }
    }
    best
}

/// Splits each row of `latents` into `num_heads` equal blocks and replaces
/// each block by the nearest codeword of that head's codebook.
pub fn quantize(
    latents: &Matrix,
    codebooks: &[Codebook],
    cfg: &QuantizerConfig,
) -> Result<(Matrix, Assignment)> {
    let heads = cfg.num_heads;
    if heads == 0 || codebooks.len() != heads {
        return Err(VqError::shape("quantize (heads)", heads, codebooks.len()));
    }
    let d = codebooks[0].dim();
    let k = codebooks[0].size();
    if let Some(bad) = codebooks.iter().find(|c| c.dim() != d || c.size() != k) {
        return Err(VqError::shape(
            "quantize (codebook shapes)",
            format!("{k}x{d}"),
            format!("{}x{}", bad.size(), bad.dim()),
        ));
    }
    if latents.cols() != heads * d {
        return Err(VqError::shape("quantize", heads * d, latents.cols()));
    }

    let n = latents.rows();
    let mut quantized = Matrix::zeros(n, heads * d);
    let mut indices = vec![0; n * heads];
    let mut histograms = vec![UsageHistogram::new(k); heads];
    for r in 0..n {
        let row = latents.row(r);
        for (h, cb) in codebooks.iter().enumerate() {
            let block = &row[h * d..(h + 1) * d];
            let best = nearest_row(block, cb.words());
            indices[r * heads + h] = best;
            histograms[h].record(best);
            quantized.row_mut(r)[h * d..(h + 1) * d].copy_from_slice(cb.word(best));
        }
    }
    Ok((
        quantized,
        Assignment {
            indices,
            num_heads: heads,
            histograms,
        },
    ))
}

/// Forward value of the three-term objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Loss of a model without a bottleneck (or during warm-up).
    pub fn task_only(task: f64) -> Self {
        Self {
            task,
            codebook: 0.0,
            commitment: 0.0,
            total: task,
        }
    }
}

pub fn vq_loss(
    latents: &Matrix,
    quantized: &Matrix,
    task_loss: f64,
    gamma_commit: f64,
) -> Result<LossBreakdown> {
    latents.ensure_same_shape(quantized, "vq_loss")?;
    let n = latents.rows().max(1) as f64;
    let distortion = latents.sub(quantized)?.sq_norm() / n;
    let codebook = distortion;
    let commitment = gamma_commit * distortion;
    Ok(LossBreakdown {
        task: task_loss,
        codebook,
        commitment,
        total: task_loss + codebook + commitment,
    })
}

/// Gradient reaching the encoder output: the task gradient copied straight
/// through the quantizer plus the commitment gradient `2γ(e − q)/n`.
pub fn straight_through_backward(
    grad_wrt_quantized: &Matrix,
    latents: &Matrix,
    quantized: &Matrix,
    gamma_commit: f64,
) -> Result<Matrix> {
    latents.ensure_same_shape(quantized, "straight_through_backward")?;
    grad_wrt_quantized.ensure_same_shape(latents, "straight_through_backward")?;
    let mut grad = grad_wrt_quantized.clone();
    if gamma_commit != 0.0 {
        let n = latents.rows().max(1) as f64;
        let coef = 2.0 * gamma_commit / n;
        for ((g, &e), &q) in grad
            .data_mut()
            .iter_mut()
            .zip(latents.data())
            .zip(quantized.data())
        {
            *g += coef * (e - q);
        }
    }
    Ok(grad)
}

/// Gradient of the codebook term with respect to the codewords.
///
/// Row `i` is `(1/n) Σ_{j → i} 2(w_i − e_j)`; codewords nobody selected get a
/// zero row. `indices[j]` is the codeword chosen for row `j` of `latents`.
pub fn codebook_grad(latents: &Matrix, indices: &[usize], codebook: &Codebook) -> Result<Matrix> {
    if latents.cols() != codebook.dim() {
        return Err(VqError::shape("codebook_grad", codebook.dim(), latents.cols()));
    }
    if indices.len() != latents.rows() {
        return Err(VqError::shape("codebook_grad (indices)", latents.rows(), indices.len()));
    }
    let n = latents.rows().max(1) as f64;
    let mut grad = Matrix::zeros(codebook.size(), codebook.dim());
    for (j, &i) in indices.iter().enumerate() {
        if i >= codebook.size() {
            return Err(VqError::IndexOutOfRange {
                what: "codebook",
                index: i,
                size: codebook.size(),
            });
        }
        let w = codebook.word(i);
        for ((g, &wv), &ev) in grad.row_mut(i).iter_mut().zip(w).zip(latents.row(j)) {
            *g += 2.0 * (wv - ev) / n;
        }
    }
    Ok(grad)
}

/// `exp` of the Shannon entropy of the empirical usage distribution.
pub fn perplexity(usage: &UsageHistogram) -> Result<f64> {
    if usage.total == 0 {
        return Err(VqError::EmptyHistogram);
    }
    let total = usage.total as f64;
    let entropy: f64 = usage
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    // Rounding can push exp(H) just past the support size.
    Ok(entropy.exp().clamp(1.0, used_tokens(usage) as f64))
}

/// Number of codewords selected at least once.
pub fn used_tokens(usage: &UsageHistogram) -> usize {
    usage.counts.iter().filter(|&&c| c > 0).count()
}

/// `K×d` codebook with i.i.d. standard-normal entries times `init_scale`.
pub fn init_codebook(k: usize, d: usize, init_scale: f64, rng: &mut Rng) -> Result<Codebook> {
    if k == 0 || d == 0 {
        return Err(VqError::InvalidArgument(format!(
            "codebook must have K >= 1 and d >= 1, got {k}x{d}"
        )));
    }
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(VqError::InvalidArgument(format!(
            "init_scale must be finite and nonnegative, got {init_scale}"
        )));
    }
    let words = Matrix::from_fn(k, d, |_, _| rng.normal() * init_scale);
    Codebook::new(words)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_word_codebook() -> Codebook {
        Codebook::new(Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]])).unwrap()
    }

    #[test]
    fn nearest_code_examples() {
        let cb = two_word_codebook();
        let a = nearest_code(&Matrix::from_rows(&[[0.9, 0.8]]), &cb).unwrap();
        assert_eq!(a.indices(), &[1]);

        let a = nearest_code(&Matrix::from_rows(&[[1.0, 1.0]]), &cb).unwrap();
        assert_eq!(a.indices(), &[1]);

        // equidistant: lowest index wins
        let a = nearest_code(&Matrix::from_rows(&[[0.5, 0.5]]), &cb).unwrap();
        assert_eq!(a.indices(), &[0]);
        assert_eq!(a.histogram().counts(), &[1, 0]);
    }

    #[test]
    fn nearest_code_dimension_mismatch() {
        let cb = two_word_codebook();
        assert!(nearest_code(&Matrix::zeros(2, 3), &cb).is_err());
    }

    #[test]
    fn single_head_quantize_is_gather() {
        let mut rng = Rng::seed_from_u64(1);
        let cb = init_codebook(5, 3, 1.0, &mut rng).unwrap();
        let x = Matrix::from_fn(9, 3, |_, _| rng.normal());
        let (q, a) = quantize(&x, std::slice::from_ref(&cb), &QuantizerConfig::default()).unwrap();
        let direct = nearest_code(&x, &cb).unwrap();
        assert_eq!(a.indices(), direct.indices());
        assert_eq!(q, cb.words().select_rows(direct.indices()).unwrap());
    }

    #[test]
    fn two_heads_exact_match_is_identity() {
        let cbs = vec![
            Codebook::new(Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0]])).unwrap(),
            Codebook::new(Matrix::from_rows(&[[-1.0, -1.0], [5.0, 0.5]])).unwrap(),
        ];
        let x = Matrix::from_rows(&[[2.0, 3.0, -1.0, -1.0], [0.0, 1.0, 5.0, 0.5]]);
        let cfg = QuantizerConfig {
            num_heads: 2,
            ..Default::default()
        };
        let (q, a) = quantize(&x, &cbs, &cfg).unwrap();
        assert_eq!(q, x);
        assert_eq!(a.indices(), &[1, 0, 0, 1]);
        assert_eq!(a.histogram().total(), 4);
    }

    #[test]
    fn quantize_head_count_mismatch() {
        let cb = two_word_codebook();
        let cfg = QuantizerConfig {
            num_heads: 2,
            ..Default::default()
        };
        assert!(quantize(&Matrix::zeros(1, 4), &[cb], &cfg).is_err());
    }

    #[test]
    fn vq_loss_examples() {
        let e = Matrix::from_rows(&[[1.0, 0.0]]);
        let l = vq_loss(&e, &e, 0.7, 0.25).unwrap();
        assert_eq!((l.codebook, l.commitment, l.total), (0.0, 0.0, 0.7));

        let q = Matrix::from_rows(&[[0.0, 0.0]]);
        let l = vq_loss(&e, &q, 0.0, 0.25).unwrap();
        assert_eq!((l.codebook, l.commitment, l.total), (1.0, 0.25, 1.25));

        assert!(vq_loss(&e, &Matrix::zeros(2, 2), 0.0, 0.25).is_err());
    }

    #[test]
    fn straight_through_examples() {
        let g = Matrix::from_rows(&[[0.3, -0.2]]);
        let e = Matrix::from_rows(&[[1.0, 2.0]]);
        assert_eq!(straight_through_backward(&g, &e, &e, 0.25).unwrap(), g);

        let q = Matrix::from_rows(&[[0.0, 0.0]]);
        let out = straight_through_backward(&Matrix::zeros(1, 2), &e, &q, 0.25).unwrap();
        assert_eq!(out.data(), &[0.5, 1.0]);
    }

    #[test]
    fn codebook_grad_examples() {
        let cb = Codebook::new(Matrix::from_rows(&[[0.0, 0.0], [9.0, 9.0]])).unwrap();
        let e = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let g = codebook_grad(&e, &[0, 0], &cb).unwrap();
        assert_eq!(g.row(0), &[-1.0, -1.0]);
        assert_eq!(g.row(1), &[0.0, 0.0]);

        assert!(matches!(
            codebook_grad(&e, &[0, 2], &cb),
            Err(VqError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn perplexity_examples() {
        let uniform = UsageHistogram::from_counts(vec![3; 16]);
        assert!((perplexity(&uniform).unwrap() - 16.0).abs() < 1e-12);

        let point = UsageHistogram::from_counts(vec![0, 10, 0]);
        assert_eq!(perplexity(&point).unwrap(), 1.0);

        let half = UsageHistogram::from_counts(vec![5, 5, 0, 0]);
        assert!((perplexity(&half).unwrap() - 2.0).abs() < 1e-12);

        assert!(matches!(
            perplexity(&UsageHistogram::new(4)),
            Err(VqError::EmptyHistogram)
        ));
    }

    #[test]
    fn used_tokens_examples() {
        assert_eq!(used_tokens(&UsageHistogram::from_counts(vec![2; 8])), 8);
        assert_eq!(used_tokens(&UsageHistogram::from_counts(vec![0, 4, 0])), 1);
        assert_eq!(used_tokens(&UsageHistogram::from_counts(vec![3, 0, 5, 0])), 2);
    }

    #[test]
    fn init_codebook_examples() {
        let mut rng = Rng::seed_from_u64(0);
        let zero = init_codebook(4, 3, 0.0, &mut rng).unwrap();
        assert!(zero.words().data().iter().all(|&v| v == 0.0));

        let a = init_codebook(6, 2, 0.5, &mut Rng::seed_from_u64(9)).unwrap();
        let b = init_codebook(6, 2, 0.5, &mut Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.capacity_bits(), 6f64.log2());
    }

    #[test]
    fn init_codebook_row_norm_monte_carlo() {
        // E‖w‖ for w ~ s·N(0, I_d) is s·√2·Γ((d+1)/2)/Γ(d/2); for d = 4 that is
        // s·3√(2π)/4. The std of ‖w‖ is s·√(d − (E‖w‖/s)²).
        let (k, d, s) = (10_000, 4, 0.3);
        let cb = init_codebook(k, d, s, &mut Rng::seed_from_u64(42)).unwrap();
        let mean_norm: f64 = cb
            .words()
            .row_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / k as f64;
        let chi_mean = 3.0 * (2.0 * std::f64::consts::PI).sqrt() / 4.0;
        let expected = s * chi_mean;
        let sd = s * (d as f64 - chi_mean * chi_mean).sqrt() / (k as f64).sqrt();
        assert!((mean_norm - expected).abs() < 3.0 * sd, "{mean_norm} vs {expected}");
        // and the loose √d heuristic
        assert!((mean_norm / (s * (d as f64).sqrt()) - 1.0).abs() < 0.1);
    }
}
