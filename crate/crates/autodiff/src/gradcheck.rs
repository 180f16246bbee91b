//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{AutodiffError, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// Relative error used throughout: `|a - n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Central difference of `f` at `x` along every coordinate.
pub fn numeric_gradient(f: impl Fn(&Matrix) -> Result<f64>, x: &Matrix, eps: f64) -> Result<Matrix> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(AutodiffError::InvalidStep(eps));
    }
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let base = x.as_slice()[k];
        probe.as_mut_slice()[k] = base + eps;
        let up = f(&probe)?;
        probe.as_mut_slice()[k] = base - eps;
        let down = f(&probe)?;
        probe.as_mut_slice()[k] = base;
        grad.as_mut_slice()[k] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Compares the reverse-mode gradient of the scalar function built by `f`
/// against central differences and returns the largest relative error
/// over coordinates.
///
/// Points where `f` is not differentiable (relu kinks) must be avoided by
/// the caller, e.g. by nudging inputs away from zero.
pub fn finite_diff_check<F>(f: F, x: &Matrix, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(AutodiffError::InvalidStep(eps));
    }
    let mut tape = Tape::new();
    let input = tape.param(x.clone())?;
    let out = f(&mut tape, input)?;
    let analytic = tape.backward(out)?.wrt(&tape, input)?;
    let numeric = numeric_gradient(
        |p| {
            let mut t = Tape::new();
            let v = t.constant(p.clone())?;
            let o = f(&mut t, v)?;
            Ok(t.value(o).item())
        },
        x,
        eps,
    )?;
    Ok(analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = x^T Q x with symmetric Q.
        let q = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let x = Matrix::column(vec![0.3, -1.2]);
        let err = finite_diff_check(
            |t, x| {
                let q = t.constant(q.clone())?;
                let qx = t.matmul(q, x)?;
                let s = t.matmul_t(x, qx, true, false)?;
                Ok(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn zero_step_rejected() {
        let x = Matrix::scalar(1.0);
        assert_eq!(
            finite_diff_check(|t, x| t.exp(x), &x, 0.0),
            Err(AutodiffError::InvalidStep(0.0))
        );
    }
}
