//! Convolutions via im2col + gemm.

use crate::error::{attr_err, shape_err, Result};
use crate::gemm::{matmul, Mat};
use crate::tensor::Tensor;

/// 2-D sliding-window geometry. 1-D convolutions use `h = kh = 1`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    dh: usize,
    dw: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(
        op: &'static str,
        (c, h, w): (usize, usize, usize),
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        (ph, pw): (usize, usize),
        (dh, dw): (usize, usize),
    ) -> Result<Geom> {
        if sh == 0 || sw == 0 {
            return Err(attr_err(op, "stride must be >= 1"));
        }
        if dh == 0 || dw == 0 {
            return Err(attr_err(op, "dilation must be >= 1"));
        }
        if kh == 0 || kw == 0 {
            return Err(attr_err(op, "empty kernel"));
        }
        let span_h = dh * (kh - 1) + 1;
        let span_w = dw * (kw - 1) + 1;
        if h + 2 * ph < span_h || w + 2 * pw < span_w {
            return Err(attr_err(op, format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        Ok(Geom {
            c,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            dh,
            dw,
            ho: (h + 2 * ph - span_h) / sh + 1,
            wo: (w + 2 * pw - span_w) / sw + 1,
        })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Input column for output column `ow` and kernel column `kw`, if inside the image.
    #[inline]
    fn src_w(&self, ow: usize, kw: usize) -> Option<usize> {
        (ow * self.sw + kw * self.dw).checked_sub(self.pw).filter(|&v| v < self.w)
    }

    #[inline]
    fn src_h(&self, oh: usize, kh: usize) -> Option<usize> {
        (oh * self.sh + kh * self.dh).checked_sub(self.ph).filter(|&v| v < self.h)
    }
}

/// `col[K, B*P]` from `x[B, C, H, W]`.
fn im2col(x: &[f64], batch: usize, g: &Geom) -> Vec<f64> {
    let (k, p) = (g.k(), g.p());
    let bp = batch * p;
    let mut col = vec![0.0; k * bp];
    for b in 0..batch {
        for c in 0..g.c {
            let xc = &x[(b * g.c + c) * g.h * g.w..(b * g.c + c + 1) * g.h * g.w];
            for kh in 0..g.kh {
                for kw in 0..g.kw {
                    let row = (c * g.kh + kh) * g.kw + kw;
                    let dst = &mut col[row * bp + b * p..row * bp + (b + 1) * p];
                    for oh in 0..g.ho {
                        let Some(ih) = g.src_h(oh, kh) else { continue };
                        let xrow = &xc[ih * g.w..(ih + 1) * g.w];
                        let drow = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                        for (ow, d) in drow.iter_mut().enumerate() {
                            if let Some(iw) = g.src_w(ow, kw) {
                                *d = xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], batch: usize, g: &Geom) -> Vec<f64> {
    let p = g.p();
    let bp = batch * p;
    let mut x = vec![0.0; batch * g.c * g.h * g.w];
    for b in 0..batch {
        for c in 0..g.c {
            let xc = &mut x[(b * g.c + c) * g.h * g.w..(b * g.c + c + 1) * g.h * g.w];
            for kh in 0..g.kh {
                for kw in 0..g.kw {
                    let row = (c * g.kh + kh) * g.kw + kw;
                    let src = &col[row * bp + b * p..row * bp + (b + 1) * p];
                    for oh in 0..g.ho {
                        let Some(ih) = g.src_h(oh, kh) else { continue };
                        for ow in 0..g.wo {
                            if let Some(iw) = g.src_w(ow, kw) {
                                xc[ih * g.w + iw] += src[oh * g.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[O, B*P]` -> `[B, O, P]`.
fn unfold_batch(m: &[f64], o: usize, batch: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for oc in 0..o {
        for b in 0..batch {
            out[(b * o + oc) * p..(b * o + oc + 1) * p].copy_from_slice(&m[oc * batch * p + b * p..oc * batch * p + (b + 1) * p]);
        }
    }
    out
}

/// `[B, O, P]` -> `[O, B*P]`.
fn fold_batch(t: &[f64], o: usize, batch: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for b in 0..batch {
        for oc in 0..o {
            out[oc * batch * p + b * p..oc * batch * p + (b + 1) * p].copy_from_slice(&t[(b * o + oc) * p..(b * o + oc + 1) * p]);
        }
    }
    out
}

fn bias_grad(g: &[f64], batch: usize, o: usize, p: usize) -> Vec<f64> {
    let mut gb = vec![0.0; o];
    for b in 0..batch {
        for (oc, acc) in gb.iter_mut().enumerate() {
            *acc += g[(b * o + oc) * p..(b * o + oc + 1) * p].iter().sum::<f64>();
        }
    }
    gb
}

fn conv_core(
    op: &'static str,
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    batch: usize,
    o: usize,
    g: Geom,
    out_shape: Vec<usize>,
) -> Result<Tensor> {
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(shape_err(op, weight.shape(), b.shape()));
        }
    }
    let (k, p) = (g.k(), g.p());
    let col = im2col(&x.data(), batch, &g);
    let out_mat = matmul(Mat::new(&weight.data(), o, k), Mat::new(&col, k, batch * p));
    let mut out = unfold_batch(&out_mat, o, batch, p);
    if let Some(b) = bias {
        let bd = b.data();
        for bi in 0..batch {
            for oc in 0..o {
                out[(bi * o + oc) * p..(bi * o + oc + 1) * p].iter_mut().for_each(|v| *v += bd[oc]);
            }
        }
    }
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let wc = weight.clone();
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        op,
        out,
        out_shape,
        parents,
        Box::new(move |gout, needs| {
            let gmat = fold_batch(gout, o, batch, p);
            let gx = needs[0].then(|| {
                let dcol = matmul(Mat::t(&wc.data(), o, k), Mat::new(&gmat, o, batch * p));
                col2im(&dcol, batch, &g)
            });
            let gw = needs[1].then(|| matmul(Mat::new(&gmat, o, batch * p), Mat::t(&col, k, batch * p)));
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(needs[2].then(|| bias_grad(gout, batch, o, p)));
            }
            grads
        }),
    ))
}

impl Tensor {
    /// `x [B, C, H, W]`, `weight [O, C, KH, KW]`, `bias [O]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err("conv2d", xs, ws));
        }
        let g = Geom::new("conv2d", (xs[1], xs[2], xs[3]), (ws[2], ws[3]), (stride, stride), (pad, pad), (1, 1))?;
        let shape = vec![xs[0], ws[0], g.ho, g.wo];
        conv_core("conv2d", self, weight, bias, xs[0], ws[0], g, shape)
    }

    /// `x [B, C, T]`, `weight [O, C, K]`, `bias [O]`.
    pub fn conv1d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(shape_err("conv1d", xs, ws));
        }
        let g = Geom::new("conv1d", (xs[1], 1, xs[2]), (1, ws[2]), (1, stride), (0, pad), (1, dilation))?;
        let shape = vec![xs[0], ws[0], g.wo];
        conv_core("conv1d", self, weight, bias, xs[0], ws[0], g, shape)
    }

    /// Per-channel convolution: `x [B, C, T]`, `weight [C, K]`, stride 1.
    pub fn depthwise_conv1d(&self, weight: &Tensor, pad: usize, dilation: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(shape_err("depthwise_conv1d", xs, ws));
        }
        let (batch, c, t, k) = (xs[0], xs[1], xs[2], ws[1]);
        let g = Geom::new("depthwise_conv1d", (1, 1, t), (1, k), (1, 1), (0, pad), (1, dilation))?;
        let to = g.wo;
        let mut out = vec![0.0; batch * c * to];
        {
            let (xd, wd) = (self.data(), weight.data());
            for bc in 0..batch * c {
                let ch = bc % c;
                let xr = &xd[bc * t..(bc + 1) * t];
                let or = &mut out[bc * to..(bc + 1) * to];
                for kk in 0..k {
                    let wv = wd[ch * k + kk];
                    for (ot, o) in or.iter_mut().enumerate() {
                        if let Some(it) = g.src_w(ot, kk) {
                            *o += wv * xr[it];
                        }
                    }
                }
            }
        }
        let (xc, wc) = (self.clone(), weight.clone());
        Ok(Tensor::from_op(
            "depthwise_conv1d",
            out,
            vec![batch, c, to],
            vec![self.clone(), weight.clone()],
            Box::new(move |gout, needs| {
                let (xd, wd) = (xc.data(), wc.data());
                let mut gx = needs[0].then(|| vec![0.0; batch * c * t]);
                let mut gw = needs[1].then(|| vec![0.0; c * k]);
                for bc in 0..batch * c {
                    let ch = bc % c;
                    let gr = &gout[bc * to..(bc + 1) * to];
                    for kk in 0..k {
                        let wv = wd[ch * k + kk];
                        let mut acc = 0.0;
                        for (ot, &gv) in gr.iter().enumerate() {
                            if let Some(it) = g.src_w(ot, kk) {
                                if let Some(gx) = gx.as_mut() {
                                    gx[bc * t + it] += wv * gv;
                                }
                                acc += gv * xd[bc * t + it];
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[ch * k + kk] += acc;
                        }
                    }
                }
                vec![gx, gw]
            }),
        ))
    }

    /// Time-channel separable convolution: depthwise `[C, K]` then pointwise `[O, C]`.
    pub fn separable_conv1d(
        &self,
        depthwise: &Tensor,
        pointwise: &Tensor,
        bias: Option<&Tensor>,
        pad: usize,
    ) -> Result<Tensor> {
        let ps = pointwise.shape();
        if ps.len() != 2 {
            return Err(shape_err("separable_conv1d", self.shape(), ps));
        }
        let dw = self.depthwise_conv1d(depthwise, pad, 1)?;
        let pw = pointwise.reshape(&[ps[0], ps[1], 1])?;
        dw.conv1d(&pw, bias, 1, 0, 1)
    }

    /// `x [B, Ci, T]`, `weight [Ci, O, K]`, `bias [O]`; output length `(T-1)*stride - 2*pad + K`.
    pub fn transposed_conv1d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] {
            return Err(shape_err("transposed_conv1d", xs, ws));
        }
        if stride == 0 {
            return Err(attr_err("transposed_conv1d", "stride must be >= 1"));
        }
        let (batch, ci, t) = (xs[0], xs[1], xs[2]);
        let (o, k) = (ws[1], ws[2]);
        let full = (t - 1) * stride + k;
        if full <= 2 * pad {
            return Err(attr_err("transposed_conv1d", "padding removes the whole output"));
        }
        let to = full - 2 * pad;
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(shape_err("transposed_conv1d", ws, b.shape()));
            }
        }
        let bt = batch * t;
        let xm = fold_batch(&self.data(), ci, batch, t);
        let col = matmul(Mat::t(&weight.data(), ci, o * k), Mat::new(&xm, ci, bt));
        let target = move |ti: usize, kk: usize| (ti * stride + kk).checked_sub(pad).filter(|&v| v < to);
        let mut out = vec![0.0; batch * o * to];
        for oc in 0..o {
            for kk in 0..k {
                let crow = &col[(oc * k + kk) * bt..(oc * k + kk + 1) * bt];
                for b in 0..batch {
                    let orow = &mut out[(b * o + oc) * to..(b * o + oc + 1) * to];
                    for ti in 0..t {
                        if let Some(dst) = target(ti, kk) {
                            orow[dst] += crow[b * t + ti];
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bd = b.data();
            for bi in 0..batch {
                for oc in 0..o {
                    out[(bi * o + oc) * to..(bi * o + oc + 1) * to].iter_mut().for_each(|v| *v += bd[oc]);
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let wc = weight.clone();
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(
            "transposed_conv1d",
            out,
            vec![batch, o, to],
            parents,
            Box::new(move |gout, needs| {
                let mut gcol = vec![0.0; o * k * bt];
                for oc in 0..o {
                    for kk in 0..k {
                        let crow = &mut gcol[(oc * k + kk) * bt..(oc * k + kk + 1) * bt];
                        for b in 0..batch {
                            let grow = &gout[(b * o + oc) * to..(b * o + oc + 1) * to];
                            for ti in 0..t {
                                if let Some(src) = target(ti, kk) {
                                    crow[b * t + ti] = grow[src];
                                }
                            }
                        }
                    }
                }
                let gx = needs[0].then(|| {
                    let gxm = matmul(Mat::new(&wc.data(), ci, o * k), Mat::new(&gcol, o * k, bt));
                    unfold_batch(&gxm, ci, batch, t)
                });
                let gw = needs[1].then(|| matmul(Mat::new(&xm, ci, bt), Mat::t(&gcol, o * k, bt)));
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(needs[2].then(|| bias_grad(gout, batch, o, to)));
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
    fn conv1d_same_padding_keeps_length() {
        let x = Tensor::ones(&[1, 2, 8]);
        let w = Tensor::ones(&[3, 2, 3]);
        let y = x.conv1d(&w, None, 1, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 8]);
        // edges see one padded zero on each side
        assert_eq!(&y.to_vec()[..8], &[4.0, 6.0, 6.0, 6.0, 6.0, 6.0, 6.0, 4.0]);
    }

    #[test]
    fn conv2d_stride_two_shape() {
        let x = Tensor::zeros(&[2, 3, 32, 96]);
        let w = Tensor::zeros(&[5, 3, 3, 3]);
        let y = x.conv2d(&w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 5, 16, 48]);
    }

    #[test]
    fn transposed_conv_inverts_stride_shape() {
        let x = Tensor::ones(&[1, 2, 10]);
        let w = Tensor::ones(&[2, 3, 4]);
        let y = x.transposed_conv1d(&w, None, 4, 0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 40]);
        // non-overlapping kernel: every output sees exactly one input per channel
        assert!(y.to_vec().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn dilated_conv_matches_direct_sum() {
        let x = Tensor::new((0..10).map(|v| v as f64).collect(), &[1, 1, 10]).unwrap();
        let w = Tensor::new(vec![1.0, 10.0, 100.0], &[1, 1, 3]).unwrap();
        let y = x.conv1d(&w, None, 1, 2, 2).unwrap().to_vec();
        for t in 0..10 {
            let mut e = 0.0;
            for k in 0..3 {
                let i = t as isize + 2 * k as isize - 2;
                if (0..10).contains(&i) {
                    e += w.data()[k] * i as f64;
                }
            }
            assert_eq!(y[t], e);
        }
    }

    #[test]
    fn rejects_zero_stride() {
        let x = Tensor::zeros(&[1, 1, 8]);
        let w = Tensor::zeros(&[1, 1, 3]);
        assert!(x.conv1d(&w, None, 0, 1, 1).is_err());
    }
}
