use crate::error::{attr_err, shape_err, Result};
use crate::tensor::Tensor;

/// `(outer, n, inner)` view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(attr_err(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(shape_err("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let s = self.shape().to_vec();
        let rank = s.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(attr_err("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * s[i + 1];
        }
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let n = self.numel();
        // src[i] = input offset of output element i
        let mut src = vec![0usize; n];
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for slot in src.iter_mut() {
            *slot = off;
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                off -= strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        let out = {
            let d = self.data();
            src.iter().map(|&i| d[i]).collect()
        };
        Ok(Tensor::from_op(
            "permute",
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for (gi, &si) in g.iter().zip(&src) {
                    gx[si] = *gi;
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(attr_err("transpose", format!("axes ({a}, {b}) out of range for rank {}", perm.len())));
        }
        perm.swap(a, b);
        self.permute(&perm)
    }

    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors.first().ok_or_else(|| attr_err("concat", "no inputs"))?;
        check_axis("concat", first.shape(), axis)?;
        for t in &tensors[1..] {
            let ok = t.rank() == first.rank()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err("concat", first.shape(), t.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let sizes: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
            for o in 0..outer {
                for (d, &n) in datas.iter().zip(&sizes) {
                    out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
                }
            }
        }
        let sizes_c = sizes.clone();
        Ok(Tensor::from_op(
            "concat",
            out,
            out_shape,
            tensors.to_vec(),
            Box::new(move |g, needs| {
                let mut grads: Vec<Option<Vec<f64>>> = sizes_c
                    .iter()
                    .zip(needs)
                    .map(|(&n, &need)| need.then(|| Vec::with_capacity(outer * n * inner)))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gr, &n) in grads.iter_mut().zip(&sizes_c) {
                        if let Some(gr) = gr.as_mut() {
                            gr.extend_from_slice(&g[pos..pos + n * inner]);
                        }
                        pos += n * inner;
                    }
                }
                grads
            }),
        ))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis("slice", self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        if start >= end || end > n {
            return Err(attr_err("slice", format!("range {start}..{end} invalid for extent {n}")));
        }
        let m = end - start;
        let mut out = Vec::with_capacity(outer * m * inner);
        {
            let d = self.data();
            for o in 0..outer {
                out.extend_from_slice(&d[(o * n + start) * inner..(o * n + end) * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        let total = self.numel();
        Ok(Tensor::from_op(
            "slice",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; total];
                for o in 0..outer {
                    gx[(o * n + start) * inner..(o * n + end) * inner].copy_from_slice(&g[o * m * inner..(o + 1) * m * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Selects entries along `axis` by index (repeats allowed). Backward
    /// sums the gradients of all copies into their source.
    pub fn gather(&self, indices: &[usize], axis: usize) -> Result<Tensor> {
        check_axis("gather", self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(attr_err("gather", format!("index {bad} out of range for extent {n}")));
        }
        let m = indices.len();
        let mut out = Vec::with_capacity(outer * m * inner);
        {
            let d = self.data();
            for o in 0..outer {
                for &i in indices {
                    out.extend_from_slice(&d[(o * n + i) * inner..(o * n + i + 1) * inner]);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        let total = self.numel();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            "gather",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; total];
                for o in 0..outer {
                    for (j, &i) in idx.iter().enumerate() {
                        let src = &g[(o * m + j) * inner..(o * m + j + 1) * inner];
                        for (d, s) in gx[(o * n + i) * inner..(o * n + i + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_2d_is_transpose() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let y = x.transpose(0, 1).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn concat_then_slice_roundtrip() {
        let a = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        let b = Tensor::new(vec![3.0, 4.0, 5.0], &[1, 3]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(c.slice(1, 2, 5).unwrap().to_vec(), b.to_vec());
        assert!(c.slice(1, 3, 3).is_err());
    }

    #[test]
    fn gather_repeats_rows_and_sums_grads() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap().requires_grad();
        let y = x.gather(&[0, 0, 1], 0).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 1.0, 1.0]);
    }
}
