use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{attr_err, shape_err, Result};
use crate::tensor::Tensor;

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Stable mix of the dropout counter triple into a single RNG seed.
pub fn dropout_seed(seed: u64, layer_id: u64, step: u64) -> u64 {
    let mut z = seed ^ layer_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dropout configuration for a single call.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
    pub train: bool,
    pub seed: u64,
    pub layer_id: u64,
    pub step: u64,
}

impl Tensor {
    /// Normalizes over `axis`; `gamma`/`beta` have that axis' extent.
    pub fn layernorm(&self, gamma: Option<&Tensor>, beta: Option<&Tensor>, axis: usize, eps: f64) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(attr_err("layernorm", format!("axis {axis} out of range for rank {}", shape.len())));
        }
        let n = shape[axis];
        for p in [gamma, beta].into_iter().flatten() {
            if p.shape() != [n] {
                return Err(shape_err("layernorm", &shape, p.shape()));
            }
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let total = self.numel();
        let mut xhat = vec![0.0; total];
        let mut inv_std = vec![0.0; outer * inner];
        {
            let xd = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let mean = (0..n).map(|j| xd[idx(j)]).sum::<f64>() / n as f64;
                    let var = (0..n).map(|j| (xd[idx(j)] - mean).powi(2)).sum::<f64>() / n as f64;
                    let is = 1.0 / (var + eps).sqrt();
                    inv_std[o * inner + i] = is;
                    for j in 0..n {
                        xhat[idx(j)] = (xd[idx(j)] - mean) * is;
                    }
                }
            }
        }
        let mut out = xhat.clone();
        {
            let gd = gamma.map(|g| g.data());
            let bd = beta.map(|b| b.data());
            for o in 0..outer {
                for j in 0..n {
                    let gv = gd.as_ref().map_or(1.0, |g| g[j]);
                    let bv = bd.as_ref().map_or(0.0, |b| b[j]);
                    for v in &mut out[(o * n + j) * inner..(o * n + j + 1) * inner] {
                        *v = *v * gv + bv;
                    }
                }
            }
        }
        let mut parents = vec![self.clone()];
        let gamma_c = gamma.cloned();
        if let Some(g) = gamma {
            parents.push(g.clone());
        }
        if let Some(b) = beta {
            parents.push(b.clone());
        }
        let has_beta = beta.is_some();
        Ok(Tensor::from_op(
            "layernorm",
            out,
            shape,
            parents,
            Box::new(move |g, needs| {
                let gd = gamma_c.as_ref().map(|t| t.data());
                let mut gx = vec![0.0; total];
                let mut ggamma = vec![0.0; n];
                let mut gbeta = vec![0.0; n];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            let gv = g[idx(j)];
                            let gam = gd.as_ref().map_or(1.0, |t| t[j]);
                            let d = gv * gam;
                            mean_d += d;
                            mean_dx += d * xhat[idx(j)];
                            ggamma[j] += gv * xhat[idx(j)];
                            gbeta[j] += gv;
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        let is = inv_std[o * inner + i];
                        for j in 0..n {
                            let gam = gd.as_ref().map_or(1.0, |t| t[j]);
                            gx[idx(j)] = is * (g[idx(j)] * gam - mean_d - xhat[idx(j)] * mean_dx);
                        }
                    }
                }
                let mut grads = vec![needs[0].then_some(gx)];
                let mut k = 1;
                if gamma_c.is_some() {
                    grads.push(needs[k].then_some(ggamma));
                    k += 1;
                }
                if has_beta {
                    grads.push(needs[k].then_some(gbeta));
                }
                grads
            }),
        ))
    }

    /// Inverted dropout; in eval mode returns `self` unchanged.
    pub fn dropout(&self, cfg: Dropout) -> Result<Tensor> {
        if !(0.0..1.0).contains(&cfg.p) {
            return Err(attr_err("dropout", format!("p={} outside [0, 1)", cfg.p)));
        }
        if !cfg.train || cfg.p == 0.0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed(cfg.seed, cfg.layer_id, cfg.step));
        let keep = 1.0 / (1.0 - cfg.p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < cfg.p { 0.0 } else { keep })
            .collect();
        let out = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(
            "dropout",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_vector_normalizes_to_zero() {
        let x = Tensor::new(vec![5.0; 4], &[4]).unwrap();
        let y = x.layernorm(None, None, 0, LAYERNORM_EPS).unwrap();
        assert_eq!(y.to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn channel_axis_normalization() {
        // [B=1, C=2, T=2]: normalize the two channel values at each step
        let x = Tensor::new(vec![1.0, 10.0, 3.0, 10.0], &[1, 2, 2]).unwrap();
        let y = x.layernorm(None, None, 1, LAYERNORM_EPS).unwrap().to_vec();
        let expect = [-1.0, 0.0, 1.0, 0.0];
        for (a, e) in y.iter().zip(expect) {
            assert!((a - e).abs() < 1e-5, "{y:?}");
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_reproducible() {
        let x = Tensor::new((0..100).map(|v| v as f64 + 1.0).collect(), &[100]).unwrap();
        let eval = Dropout { p: 0.5, train: false, seed: 1, layer_id: 2, step: 3 };
        assert_eq!(x.dropout(eval).unwrap().to_vec(), x.to_vec());
        let train = Dropout { train: true, ..eval };
        let a = x.dropout(train).unwrap().to_vec();
        let b = x.dropout(train).unwrap().to_vec();
        assert_eq!(a, b);
        assert!(a.iter().any(|&v| v == 0.0) && a.iter().any(|&v| v != 0.0));
        let c = x.dropout(Dropout { step: 4, ..train }).unwrap().to_vec();
        assert_ne!(a, c);
    }
}
