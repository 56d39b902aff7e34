//! Central finite-difference verification of tape gradients.

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest relative error between the tape gradient of `f` at `x` and a
/// central finite difference with step `eps`.
///
/// The relative error per element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("grad_check eps must be > 0, got {eps}")));
    }
    let analytic = {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = f(&tape, xv)?;
        let value = tape.item(y)?;
        if !value.is_finite() {
            return Err(Error::non_finite("grad_check objective"));
        }
        tape.backward(y)?.get_or_zeros(xv, x.shape())
    };
    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(probe);
        let y = f(&tape, xv)?;
        let v = tape.item(y)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::non_finite("grad_check objective"))
        }
    };
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(probe.clone())?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(probe.clone())?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_f64(vec![5], &[0.3, -1.2, 2.5, 0.0, 7.0]).unwrap();
        let err = grad_check(|t, v| Ok(t.sum_all(v)), &x, 1e-4).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        let x = Tensor::from_f64(vec![1], &[0.0]).unwrap();
        assert!(grad_check(|t, v| Ok(t.sum_all(v)), &x, 0.0).is_err());
        let r = grad_check(|t, v| Ok(t.sum_all(t.log10(v))), &x, 1e-4);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
