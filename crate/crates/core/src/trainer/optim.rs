use crate::error::{Result, VqError};
use crate::numerics::Matrix;
use crate::quantizer::Codebook;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    /// Base SGD learning rate for network parameters.
    pub lr: f64,
    /// Codebook learning rate is `lr * codebook_lr_mult`.
    pub codebook_lr_mult: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            codebook_lr_mult: 10.0,
        }
    }
}

impl OptimConfig {
    pub fn codebook_lr(&self) -> f64 {
        self.lr * self.codebook_lr_mult
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(VqError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.codebook_lr_mult > 0.0 && self.codebook_lr_mult.is_finite()) {
            return Err(VqError::Config(format!(
                "codebook_lr_mult must be positive, got {}",
                self.codebook_lr_mult
            )));
        }
        Ok(())
    }
}

/// `w ← w − lr·codebook_lr_mult·grad`.
pub fn sgd_codebook_update(codebook: &mut Codebook, grad: &Matrix, cfg: &OptimConfig) -> Result<()> {
    grad.ensure_same_shape(codebook.words(), "sgd_codebook_update")?;
    if !grad.is_finite() {
        return Err(VqError::NonFinite("sgd_codebook_update"));
    }
    codebook.words_mut().axpy(-cfg.codebook_lr(), grad)
}

/// Plain SGD step on a flat parameter slice.
pub fn sgd_update(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if params.len() != grad.len() {
        return Err(VqError::shape("sgd_update", params.len(), grad.len()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(VqError::NonFinite("sgd_update"));
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

/// `avg ← decay·avg + (1 − decay)·params`.
pub fn polyak_average(avg: &mut [f64], params: &[f64], decay: f64) {
    debug_assert_eq!(avg.len(), params.len());
    let w = 1.0 - decay;
    for (a, &p) in avg.iter_mut().zip(params) {
        *a = decay * *a + w * p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_codebook() {
        let mut cb = Codebook::new(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        let before = cb.clone();
        sgd_codebook_update(&mut cb, &Matrix::zeros(2, 2), &OptimConfig::default()).unwrap();
        assert_eq!(cb, before);
    }

    #[test]
    fn single_step_arithmetic() {
        // w=(1,0), e=(0,0), n=1: grad = 2(w − e) = (2, 0); step 0.05 → (0.9, 0).
        let mut cb = Codebook::new(Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        let e = Matrix::from_rows(&[[0.0, 0.0]]);
        let grad = crate::quantizer::codebook_grad(&e, &[0], &cb).unwrap();
        let cfg = OptimConfig {
            lr: 0.005,
            codebook_lr_mult: 10.0,
        };
        sgd_codebook_update(&mut cb, &grad, &cfg).unwrap();
        assert!((cb.word(0)[0] - 0.9).abs() < 1e-15);
        assert_eq!(cb.word(0)[1], 0.0);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut cb = Codebook::new(Matrix::from_rows(&[[1.0]])).unwrap();
        let r = sgd_codebook_update(&mut cb, &Matrix::from_rows(&[[f64::NAN]]), &OptimConfig::default());
        assert!(matches!(r, Err(VqError::NonFinite(_))));
    }

    #[test]
    fn polyak_examples() {
        let mut avg = vec![5.0, -1.0];
        polyak_average(&mut avg, &[1.0, 2.0], 0.0);
        assert_eq!(avg, vec![1.0, 2.0]);

        let mut avg = vec![0.0];
        for step in 1..=50 {
            polyak_average(&mut avg, &[1.0], 0.9);
            let expected_gap = 0.9f64.powi(step);
            assert!(((1.0 - avg[0]) - expected_gap).abs() < 1e-12);
        }
    }
}
