use crate::error::{Result, VqError};

use super::Matrix;

/// Central-difference gradient of `f` at `x`:
/// `(f(x + εe_i) − f(x − εe_i)) / 2ε` for every entry `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Matrix, eps: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(VqError::InvalidArgument(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(VqError::NonFinite("finite_diff_grad"));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Richardson-extrapolated central difference, `(4·D(ε/2) − D(ε)) / 3`
/// where `D` is [`finite_diff_grad`]. Truncation error is fourth order in
/// `ε`, which matters for functions with large third derivatives.
pub fn richardson_diff_grad<F>(mut f: F, x: &Matrix, eps: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    let coarse = finite_diff_grad(&mut f, x, eps)?;
    let fine = finite_diff_grad(&mut f, x, eps / 2.0)?;
    fine.scale(4.0).zip_map(&coarse, |a, b| (a - b) / 3.0)
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, floor)`.
///
/// The floor keeps entries that are (near) zero in both arguments from
/// dominating the ratio.
pub fn max_relative_error(a: &Matrix, b: &Matrix, floor: f64) -> Result<f64> {
    a.ensure_same_shape(b, "max_relative_error")?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm_gradient() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let g = finite_diff_grad(|m| m.sq_norm(), &x, 1e-5).unwrap();
        assert!((g.get(0, 0) - 2.0).abs() < 1e-6);
        assert!((g.get(0, 1) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn richardson_is_exact_for_cubics() {
        let x = Matrix::from_rows(&[vec![0.7, -1.3]]);
        let g = richardson_diff_grad(|m| m.data().iter().map(|v| v.powi(3)).sum(), &x, 1e-2).unwrap();
        for (gi, xi) in g.data().iter().zip(x.data()) {
            assert!((gi - 3.0 * xi * xi).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Matrix::from_rows(&[[0.3, -1.0], [2.0, 5.0]]);
        let g = finite_diff_grad(|_| 4.2, &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_sum_gradient() {
        let mut rng = crate::Rng::seed_from_u64(5);
        let x = Matrix::from_fn(3, 4, |_, _| rng.normal());
        let g = finite_diff_grad(|m| m.data().iter().map(|v| v.sin()).sum(), &x, 1e-5).unwrap();
        let expected = x.map(f64::cos);
        assert!(g.max_abs_diff(&expected).unwrap() < 1e-8);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let x = Matrix::from_rows(&[[0.0]]);
        let r = finite_diff_grad(|m| 1.0 / m.get(0, 0).abs().min(0.0), &x, 1e-5);
        assert!(matches!(r, Err(VqError::NonFinite(_))));
    }
}
