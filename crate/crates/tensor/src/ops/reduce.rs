use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

impl Tensor {
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![s], vec![], vec![self.clone()], Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Global average over all axes after the first two: `[B, C, ..] -> [B, C]`.
    pub fn mean_pool(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() < 3 {
            return Err(shape_err("mean_pool", s, &[]));
        }
        let (b, c) = (s[0], s[1]);
        let area: usize = s[2..].iter().product();
        let inv = 1.0 / area as f64;
        let out = self.data().chunks(area).map(|ch| ch.iter().sum::<f64>() * inv).collect();
        Ok(Tensor::from_op(
            "mean_pool",
            out,
            vec![b, c],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(b * c * area);
                for &gv in g {
                    gx.extend(std::iter::repeat_n(gv * inv, area));
                }
                vec![Some(gx)]
            }),
        ))
    }
}
