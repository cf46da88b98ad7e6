use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Maximum over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` where `numeric`
/// is the central difference with step `eps`.
///
/// `f` must be scalar-valued and deterministic. Other tensors the closure
/// captures act as constants.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let base = x.to_vec();
    let shape = x.shape().to_vec();
    let probe = Tensor::new(base.clone(), &shape)?.requires_grad();
    f(&probe)?.backward()?;
    let analytic = probe.grad_or_zeros();

    let eval = |data: Vec<f64>| -> Result<f64> { no_grad(|| Ok(f(&Tensor::new(data, &shape)?)?.item())) };
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::from_slice(&[1.0, -2.0, 0.5]);
        let err = grad_check(|t| Ok(t.mul(t)?.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // relu at exactly zero: analytic 0, numeric 0.5
        let x = Tensor::from_slice(&[0.0]);
        let err = grad_check(|t| Ok(t.relu().sum()), &x, 1e-5).unwrap();
        assert!(err > 0.5);
    }
}
