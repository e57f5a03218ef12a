use crate::error::{Result, VqError};
use crate::numerics::Matrix;
use crate::quantizer::Codebook;

/// Running usage counts `N_i` and running sums `m_i` for the EMA rule.
///
/// Each step applies
///
/// ```text
/// N_i ← γ·N_i + (1 − γ)·n_i
/// m_i ← γ·m_i + (1 − γ)·Σ_{j → i} e_j
/// w_i ← m_i / N_i
/// ```
///
/// Codewords with `n_i = 0` decay `N_i` and `m_i` by the same factor, so
/// their `w_i` is left as is.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    counts: Vec<f64>,
    means: Matrix,
    discount: f64,
    pinned: bool,
}

impl EmaState {
    /// `N_i = 1`, `m_i = w_i`.
    pub fn new(codebook: &Codebook, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(VqError::Config(format!(
                "EMA discount must lie in (0, 1), got {discount}"
            )));
        }
        Ok(Self {
            counts: vec![1.0; codebook.size()],
            means: codebook.words().clone(),
            discount,
            pinned: false,
        })
    }

    /// Variant that keeps every `N_i` fixed at 1 and applies the sum update
    /// to every codeword, assigned or not.
    pub fn with_pinned_counts(codebook: &Codebook, discount: f64) -> Result<Self> {
        let mut s = Self::new(codebook, discount)?;
        s.pinned = true;
        Ok(s)
    }

    pub fn from_parts(counts: Vec<f64>, means: Matrix, discount: f64, pinned: bool) -> Result<Self> {
        if counts.len() != means.rows() {
            return Err(VqError::shape("EmaState::from_parts", means.rows(), counts.len()));
        }
        Ok(Self {
            counts,
            means,
            discount,
            pinned,
        })
    }

    /// Restarts from the current codebook (after reestimation).
    pub fn reset(&mut self, codebook: &Codebook) {
        self.counts = vec![1.0; codebook.size()];
        self.means = codebook.words().clone();
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned
    }
}

/// One EMA step from the latents assigned in this batch. `indices[j]` is the
/// codeword chosen for row `j` of `latents`.
pub fn ema_codebook_update(
    state: &mut EmaState,
    latents: &Matrix,
    indices: &[usize],
    codebook: &mut Codebook,
) -> Result<()> {
    let (k, d) = (codebook.size(), codebook.dim());
    if state.counts.len() != k || state.means.cols() != d {
        return Err(VqError::shape(
            "ema_codebook_update (state)",
            format!("{k}x{d}"),
            format!("{}x{}", state.counts.len(), state.means.cols()),
        ));
    }
    if latents.cols() != d || indices.len() != latents.rows() {
        return Err(VqError::shape(
            "ema_codebook_update",
            format!("{} rows of width {d}", indices.len()),
            format!("{}x{}", latents.rows(), latents.cols()),
        ));
    }

    let mut batch_counts = vec![0usize; k];
    let mut batch_sums = Matrix::zeros(k, d);
    for (row, &i) in latents.row_iter().zip(indices) {
        if i >= k {
            return Err(VqError::IndexOutOfRange {
                what: "codebook",
                index: i,
                size: k,
            });
        }
        batch_counts[i] += 1;
        for (s, &v) in batch_sums.row_mut(i).iter_mut().zip(row) {
            *s += v;
        }
    }

    let g = state.discount;
    let w = 1.0 - g;
    for i in 0..k {
        if !state.pinned {
            state.counts[i] = g * state.counts[i] + w * batch_counts[i] as f64;
        }
        for (m, &s) in state.means.row_mut(i).iter_mut().zip(batch_sums.row(i)) {
            *m = g * *m + w * s;
        }
        let n = state.counts[i];
        if !(n > 0.0) {
            return Err(VqError::CountUnderflow(i));
        }
        if batch_counts[i] > 0 || state.pinned {
            let inv = 1.0 / n;
            for (c, &m) in codebook.words_mut().row_mut(i).iter_mut().zip(state.means.row(i)) {
                *c = m * inv;
            }
        }
    }
    if !codebook.words().is_finite() {
        return Err(VqError::NonFinite("ema_codebook_update"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_is_convex_step() {
        let mut cb = Codebook::new(Matrix::from_rows(&[[1.0, -2.0]])).unwrap();
        let mut st = EmaState::new(&cb, 0.9).unwrap();
        let e = Matrix::from_rows(&[[3.0, 0.0]]);
        ema_codebook_update(&mut st, &e, &[0], &mut cb).unwrap();
        // N = 0.9 + 0.1 = 1 stays 1; w = 0.9w + 0.1e
        assert!((cb.word(0)[0] - 1.2).abs() < 1e-15);
        assert!((cb.word(0)[1] + 1.8).abs() < 1e-15);
        assert!((st.counts()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unassigned_codeword_keeps_position() {
        let mut cb = Codebook::new(Matrix::from_rows(&[[0.0, 0.0], [5.0, 5.0]])).unwrap();
        let mut st = EmaState::new(&cb, 0.8).unwrap();
        let e = Matrix::from_rows(&[[0.5, 0.1], [0.2, -0.3]]);
        for _ in 0..25 {
            ema_codebook_update(&mut st, &e, &[0, 0], &mut cb).unwrap();
            assert_eq!(cb.word(1), &[5.0, 5.0]);
        }
        let ratio = st.means().get(1, 0) / st.counts()[1];
        assert!((ratio - 5.0).abs() < 1e-12);
        assert!(st.counts()[1] < 1e-2);
    }

    #[test]
    fn underflow_is_reported() {
        let mut cb = Codebook::new(Matrix::from_rows(&[[0.0], [1.0]])).unwrap();
        let mut st = EmaState::new(&cb, 0.5).unwrap();
        let e = Matrix::from_rows(&[[0.0]]);
        let mut failed = false;
        for _ in 0..2000 {
            if let Err(err) = ema_codebook_update(&mut st, &e, &[0], &mut cb) {
                assert!(matches!(err, VqError::CountUnderflow(1)));
                failed = true;
                break;
            }
        }
        assert!(failed);
    }

    #[test]
    fn discount_out_of_range() {
        let cb = Codebook::new(Matrix::from_rows(&[[0.0]])).unwrap();
        assert!(EmaState::new(&cb, 1.0).is_err());
        assert!(EmaState::new(&cb, 0.0).is_err());
    }
}
