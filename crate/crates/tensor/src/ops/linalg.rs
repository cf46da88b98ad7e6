use crate::error::{shape_err, Result};
use crate::gemm::{gemm, matmul, Mat};
use crate::tensor::Tensor;

impl Tensor {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(shape_err("matmul", a, b));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let out = matmul(Mat::new(&self.data(), m, k), Mat::new(&other.data(), k, n));
        let (ac, bc) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| matmul(Mat::new(g, m, n), Mat::t(&bc.data(), k, n)));
                let gb = needs[1].then(|| matmul(Mat::t(&ac.data(), m, k), Mat::new(g, m, n)));
                vec![ga, gb]
            }),
        ))
    }

    /// Affine map over the last axis: `x [.., in]`, `weight [out, in]`, `bias [out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[1] {
            return Err(shape_err("linear", xs, ws));
        }
        let (out_f, in_f) = (ws[0], ws[1]);
        if let Some(b) = bias {
            if b.shape() != [out_f] {
                return Err(shape_err("linear", ws, b.shape()));
            }
        }
        let rows = self.numel() / in_f;
        let mut out = matmul(Mat::new(&self.data(), rows, in_f), Mat::t(&weight.data(), out_f, in_f));
        if let Some(b) = bias {
            let bd = b.data();
            for r in 0..rows {
                for (o, bv) in out[r * out_f..(r + 1) * out_f].iter_mut().zip(bd.iter()) {
                    *o += bv;
                }
            }
        }
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = out_f;
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (xc, wc) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(
            "linear",
            out,
            shape,
            parents,
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| matmul(Mat::new(g, rows, out_f), Mat::new(&wc.data(), out_f, in_f)));
                let gw = needs[1].then(|| {
                    let mut gw = vec![0.0; out_f * in_f];
                    gemm(Mat::t(g, rows, out_f), Mat::new(&xc.data(), rows, in_f), &mut gw, 0.0);
                    gw
                });
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(needs[2].then(|| {
                        let mut gb = vec![0.0; out_f];
                        for r in 0..rows {
                            for (acc, gv) in gb.iter_mut().zip(&g[r * out_f..(r + 1) * out_f]) {
                                *acc += gv;
                            }
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[3, 2]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![4.0, 5.0, 10.0, 11.0]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn linear_zero_weight_gives_bias() {
        let x = Tensor::ones(&[4, 3]);
        let w = Tensor::zeros(&[2, 3]);
        let b = Tensor::from_slice(&[1.0, -1.0]);
        let y = x.linear(&w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        assert_eq!(y.to_vec(), vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
    }
}
