use its_tensor::{ParamStore, Tensor};

use crate::error::Result;
use crate::nn::{Conv1d, Init};

#[derive(Debug, Clone)]
struct Layer {
    dilated: Conv1d,
    cond: Conv1d,
    out: Conv1d,
}

/// Non-causal WaveNet: dilated convolutions with gated activations,
/// residual connections and summed skip outputs.
#[derive(Debug, Clone)]
pub struct WaveNet {
    layers: Vec<Layer>,
    channels: usize,
}

impl WaveNet {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, channels: usize, kernel: usize, dilations: &[usize]) -> Self {
        let layers = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let name = format!("{prefix}/layer{i}");
                Layer {
                    dilated: Conv1d::same(store, seed, &format!("{name}/dilated"), channels, 2 * channels, kernel, d, Init::Xavier),
                    cond: Conv1d::pointwise(store, seed, &format!("{name}/cond"), channels, 2 * channels, Init::Xavier),
                    out: Conv1d::pointwise(store, seed, &format!("{name}/out"), channels, 2 * channels, Init::Xavier),
                }
            })
            .collect();
        WaveNet { layers, channels }
    }

    /// `x` and `cond` are `[B, C, T]`; returns the skip sum, `[B, C, T]`.
    pub fn forward(&self, x: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let c = self.channels;
        let mut h = x.clone();
        let mut skip: Option<Tensor> = None;
        for layer in &self.layers {
            let pre = layer.dilated.forward(&h)?.add(&layer.cond.forward(cond)?)?;
            let gated = pre.slice(1, 0, c)?.tanh().mul(&pre.slice(1, c, 2 * c)?.sigmoid())?;
            let out = layer.out.forward(&gated)?;
            h = h.add(&out.slice(1, 0, c)?)?;
            let s = out.slice(1, c, 2 * c)?;
            skip = Some(match skip {
                Some(acc) => acc.add(&s)?,
                None => s,
            });
        }
        Ok(skip.unwrap_or(h))
    }
}
