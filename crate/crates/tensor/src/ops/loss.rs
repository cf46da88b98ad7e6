use crate::error::{attr_err, shape_err, Result};
use crate::tensor::Tensor;

impl Tensor {
    /// Mean softmax cross-entropy of `[N, K]` logits against integer classes.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(shape_err("cross_entropy", s, &[targets.len()]));
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(attr_err("cross_entropy", format!("target {bad} >= {k} classes")));
        }
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        {
            let d = self.data();
            for r in 0..n {
                let row = &d[r * k..(r + 1) * k];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + z.ln();
                loss += lse - row[targets[r]];
                for c in 0..k {
                    probs[r * k + c] = (row[c] - lse).exp();
                }
            }
        }
        let targets = targets.to_vec();
        let inv = 1.0 / n as f64;
        Ok(Tensor::from_op(
            "cross_entropy",
            vec![loss * inv],
            vec![],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    gx[r * k + t] -= 1.0;
                }
                gx.iter_mut().for_each(|v| *v *= g[0] * inv);
                vec![Some(gx)]
            }),
        ))
    }

    /// Mean squared error.
    pub fn mse(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(shape_err("mse", self.shape(), target.shape()));
        }
        let d = self.sub(target)?;
        Ok(d.mul(&d)?.mean())
    }

    /// Mean absolute error; the subgradient at zero is zero.
    pub fn l1(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(shape_err("l1", self.shape(), target.shape()));
        }
        let n = self.numel().max(1);
        let diff: Vec<f64> = self.data().iter().zip(target.data().iter()).map(|(a, b)| a - b).collect();
        let val = diff.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        Ok(Tensor::from_op(
            "l1",
            vec![val],
            vec![],
            vec![self.clone(), target.clone()],
            Box::new(move |g, needs| {
                let s = g[0] / n as f64;
                let ga: Vec<f64> = diff.iter().map(|d| s * sign(*d)).collect();
                let gb = needs[1].then(|| ga.iter().map(|v| -v).collect());
                vec![needs[0].then_some(ga), gb]
            }),
        ))
    }

    /// Mean over elements of `KL(N(mu, sigma^2) || N(0, 1))` with `self = mu`.
    pub fn kl_diag_gaussian_vs_standard_normal(&self, log_sigma: &Tensor) -> Result<Tensor> {
        if self.shape() != log_sigma.shape() {
            return Err(shape_err("kl_diag_gaussian_vs_standard_normal", self.shape(), log_sigma.shape()));
        }
        let n = self.numel().max(1);
        let (mu, ls) = (self.to_vec(), log_sigma.to_vec());
        let val = mu
            .iter()
            .zip(&ls)
            .map(|(m, l)| 0.5 * (m * m + (2.0 * l).exp() - 1.0) - l)
            .sum::<f64>()
            / n as f64;
        Ok(Tensor::from_op(
            "kl_diag_gaussian_vs_standard_normal",
            vec![val],
            vec![],
            vec![self.clone(), log_sigma.clone()],
            Box::new(move |g, needs| {
                let s = g[0] / n as f64;
                let gm = needs[0].then(|| mu.iter().map(|m| s * m).collect());
                let gl = needs[1].then(|| ls.iter().map(|l| s * ((2.0 * l).exp() - 1.0)).collect());
                vec![gm, gl]
            }),
        ))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_loss_and_grad() {
        let x = Tensor::zeros(&[1, 4]).requires_grad();
        let loss = x.cross_entropy(&[2]).unwrap();
        assert!((loss.item() - 4f64.ln()).abs() < 1e-12);
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        assert!((g[2] - (0.25 - 1.0)).abs() < 1e-12);
        assert!((g[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ce_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for m in [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
            let x = Tensor::new(vec![m, 0.0, 0.0], &[1, 3]).unwrap();
            let l = x.cross_entropy(&[0]).unwrap().item();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn kl_closed_form() {
        let mu = Tensor::from_slice(&[1.0]);
        let ls = Tensor::from_slice(&[0.0]);
        assert_eq!(mu.kl_diag_gaussian_vs_standard_normal(&ls).unwrap().item(), 0.5);
        let z = Tensor::zeros(&[3]);
        assert_eq!(z.kl_diag_gaussian_vs_standard_normal(&z).unwrap().item(), 0.0);
    }

    #[test]
    fn ce_rejects_bad_target() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(x.cross_entropy(&[0, 3]).is_err());
        assert!(x.cross_entropy(&[0]).is_err());
    }
}
