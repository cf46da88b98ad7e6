//! Parameterized layers over the tensor ops.
//!
//! Every parameter is initialized from its own named RNG stream, so a
//! model's initial weights do not depend on construction order.

use its_tensor::init::{kaiming, stream_rng, xavier};
use its_tensor::{Dropout, ParamStore, Tensor, LAYERNORM_EPS};

use crate::error::Result;

/// Train mode carries the counters that seed dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64, step: u64 },
    Eval,
}

impl Mode {
    pub fn dropout(self, p: f64, layer_id: u64) -> Dropout {
        match self {
            Mode::Train { seed, step } => Dropout { p, train: true, seed, layer_id, step },
            Mode::Eval => Dropout { p, train: false, seed: 0, layer_id, step: 0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Kaiming,
    Xavier,
    Zeros,
}

/// Registers a fresh parameter under `name`.
pub fn param(store: &mut ParamStore, seed: u64, name: &str, shape: &[usize], fan: (usize, usize), init: Init) -> Tensor {
    let mut rng = stream_rng(seed, name);
    let t = match init {
        Init::Kaiming => kaiming(shape, fan.0, &mut rng),
        Init::Xavier => xavier(shape, fan.0, fan.1, &mut rng),
        Init::Zeros => Tensor::zeros(shape),
    };
    store.add(name, t)
}

fn bias(store: &mut ParamStore, name: &str, n: usize) -> Tensor {
    store.add(format!("{name}/bias"), Tensor::zeros(&[n]))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, inp: usize, out: usize, init: Init) -> Self {
        let weight = param(store, seed, &format!("{name}/weight"), &[out, inp], (inp, out), init);
        Linear { weight, bias: bias(store, name, out) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.linear(&self.weight, Some(&self.bias))?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let weight = param(store, seed, &format!("{name}/weight"), &[cout, cin, k, k], (cin * k * k, cout * k * k), Init::Kaiming);
        Conv2d { weight, bias: bias(store, name, cout), stride, pad: k / 2 }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv2d(&self.weight, Some(&self.bias), self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        init: Init,
    ) -> Self {
        let weight = param(store, seed, &format!("{name}/weight"), &[cout, cin, k], (cin * k, cout * k), init);
        Conv1d { weight, bias: bias(store, name, cout), stride, pad, dilation }
    }

    /// Length-preserving convolution with odd kernel `k`.
    pub fn same(store: &mut ParamStore, seed: u64, name: &str, cin: usize, cout: usize, k: usize, dilation: usize, init: Init) -> Self {
        Self::new(store, seed, name, cin, cout, k, 1, dilation * (k / 2), dilation, init)
    }

    pub fn pointwise(store: &mut ParamStore, seed: u64, name: &str, cin: usize, cout: usize, init: Init) -> Self {
        Self::new(store, seed, name, cin, cout, 1, 1, 0, 1, init)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv1d(&self.weight, Some(&self.bias), self.stride, self.pad, self.dilation)?)
    }
}

/// Depthwise convolution over time followed by a pointwise channel mix.
#[derive(Debug, Clone)]
pub struct SeparableConv1d {
    pub depthwise: Tensor,
    pub pointwise: Tensor,
    pub bias: Tensor,
    pub pad: usize,
}

impl SeparableConv1d {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let depthwise = param(store, seed, &format!("{name}/depthwise"), &[cin, k], (k, k), Init::Xavier);
        let pointwise = param(store, seed, &format!("{name}/pointwise"), &[cout, cin], (cin, cout), Init::Kaiming);
        SeparableConv1d { depthwise, pointwise, bias: bias(store, name, cout), pad: k / 2 }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.separable_conv1d(&self.depthwise, &self.pointwise, Some(&self.bias), self.pad)?)
    }
}

#[derive(Debug, Clone)]
pub struct TransposedConv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl TransposedConv1d {
    /// Upsampling by `stride` with kernel equal to the stride.
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let weight = param(store, seed, &format!("{name}/weight"), &[cin, cout, stride], (cin, cout), Init::Kaiming);
        TransposedConv1d { weight, bias: bias(store, name, cout), stride }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.transposed_conv1d(&self.weight, Some(&self.bias), self.stride, 0)?)
    }
}

/// Affine layer normalization over one axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub axis: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, n: usize, axis: usize) -> Self {
        let gamma = store.add(format!("{name}/gamma"), Tensor::ones(&[n]));
        let beta = store.add(format!("{name}/beta"), Tensor::zeros(&[n]));
        LayerNorm { gamma, beta, axis }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.layernorm(Some(&self.gamma), Some(&self.beta), self.axis, LAYERNORM_EPS)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, n: usize, dim: usize) -> Self {
        let table = param(store, seed, &format!("{name}/table"), &[n, dim], (2, dim), Init::Kaiming);
        Embedding { table }
    }

    /// `[len, dim]` rows for `ids`.
    pub fn forward(&self, ids: &[usize]) -> Result<Tensor> {
        Ok(self.table.gather(ids, 0)?)
    }
}
