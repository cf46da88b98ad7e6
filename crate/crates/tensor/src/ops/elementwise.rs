use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out`, zero along broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..n {
        f(i, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }
}

fn binary(kind: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| shape_err(kind.name(), a.shape(), b.shape()))?;
    let n: usize = out_shape.iter().product();
    let same = a.shape() == b.shape();
    let mut out = vec![0.0; n];
    {
        let (ad, bd) = (a.data(), b.data());
        if same {
            for i in 0..n {
                out[i] = kind.apply(ad[i], bd[i]);
            }
        } else {
            let sa = aligned_strides(a.shape(), &out_shape);
            let sb = aligned_strides(b.shape(), &out_shape);
            for_each_broadcast(&out_shape, &sa, &sb, |i, ia, ib| out[i] = kind.apply(ad[ia], bd[ib]));
        }
    }
    let (ac, bc) = (a.clone(), b.clone());
    let shape_c = out_shape.clone();
    Ok(Tensor::from_op(
        kind.name(),
        out,
        out_shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let (na, nb) = (ac.numel(), bc.numel());
            let mut ga = needs[0].then(|| vec![0.0; na]);
            let mut gb = needs[1].then(|| vec![0.0; nb]);
            let (ad, bd) = (ac.data(), bc.data());
            let mut step = |i: usize, ia: usize, ib: usize| {
                let gi = g[i];
                match kind {
                    Binary::Add => {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += gi;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += gi;
                        }
                    }
                    Binary::Sub => {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += gi;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] -= gi;
                        }
                    }
                    Binary::Mul => {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += gi * bd[ib];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += gi * ad[ia];
                        }
                    }
                }
            };
            if ac.shape() == bc.shape() {
                for i in 0..g.len() {
                    step(i, i, i);
                }
            } else {
                let sa = aligned_strides(ac.shape(), &shape_c);
                let sb = aligned_strides(bc.shape(), &shape_c);
                for_each_broadcast(&shape_c, &sa, &sb, step);
            }
            vec![ga, gb]
        }),
    ))
}

/// Unary op with derivative expressed through the input `x` and output `y`.
fn unary(
    name: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    let yc = out.clone();
    Tensor::from_op(
        name,
        out,
        x.shape().to_vec(),
        vec![x.clone()],
        Box::new(move |g, _| {
            let xd = xc.data();
            let gx = g.iter().zip(xd.iter()).zip(&yc).map(|((&gi, &xi), &yi)| gi * df(xi, yi)).collect();
            vec![Some(gx)]
        }),
    )
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Sub, self, other)
    }

    /// Element-wise (Hadamard) product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(Binary::Mul, self, other)
    }

    pub fn relu(&self) -> Tensor {
        unary("relu", self, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `ln(1 + e^x)`, linear above 20 to avoid overflow.
    pub fn softplus(&self) -> Tensor {
        unary("softplus", self, softplus_scalar, |x, _| if x > 20.0 { 1.0 } else { sigmoid_scalar(x) })
    }

    pub fn sigmoid(&self) -> Tensor {
        unary("sigmoid", self, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        unary("tanh", self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn log1p(&self) -> Tensor {
        unary("log1p", self, f64::ln_1p, |x, _| 1.0 / (1.0 + x))
    }

    pub fn neg(&self) -> Tensor {
        unary("neg", self, |v| -v, |_, _| -1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary("scale", self, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary("add_scalar", self, move |v| v + c, |_, _| 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn bias_add_grad_sums_rows() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap().requires_grad();
        let b = Tensor::new(vec![0.5, 0.0, -1.0], &[3]).unwrap().requires_grad();
        let y = x.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![1.5, 2.0, 2.0, 4.5, 5.0, 5.0]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let y = Tensor::scalar(0.0).softplus();
        assert!((y.item() - std::f64::consts::LN_2).abs() < 1e-15);
        let big = Tensor::scalar(50.0).softplus();
        assert_eq!(big.item(), 50.0);
    }

    #[test]
    fn mismatched_shapes_name_the_op() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4]);
        let err = a.mul(&b).unwrap_err().to_string();
        assert!(err.contains("mul") && err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }
}
