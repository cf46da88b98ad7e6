//! Duration predictor, projection and length regulator.
//!
//! The predictor solves two tasks with one output: a positive duration for
//! every phoneme slot and zero for every ε slot.

use its_tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{Conv1d, Init, LayerNorm, Linear, Mode, SeparableConv1d};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DurationConfig {
    pub kernel: usize,
    pub blocks: usize,
    pub dropout: f64,
}

impl Default for DurationConfig {
    fn default() -> Self {
        DurationConfig { kernel: 3, blocks: 2, dropout: 0.1 }
    }
}

/// Dropout layer ids used by the predictor; other modules use other ranges.
const DROPOUT_LAYER_BASE: u64 = 100;

#[derive(Debug, Clone)]
struct Block {
    sep: SeparableConv1d,
    step: Conv1d,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct DurationPredictor {
    blocks: Vec<Block>,
    out: Linear,
    dropout: f64,
}

impl DurationPredictor {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize, cfg: &DurationConfig) -> Self {
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let name = format!("{prefix}/block{i}");
                Block {
                    sep: SeparableConv1d::new(store, seed, &format!("{name}/separable"), dim, dim, cfg.kernel),
                    step: Conv1d::pointwise(store, seed, &format!("{name}/step"), dim, dim, Init::Kaiming),
                    norm: LayerNorm::new(store, &format!("{name}/norm"), dim, 1),
                }
            })
            .collect();
        let out = Linear::new(store, seed, &format!("{prefix}/out"), dim, 1, Init::Xavier);
        DurationPredictor { blocks, out, dropout: cfg.dropout }
    }

    /// `[B, L, D]` hidden to `[B, L]` non-negative durations.
    pub fn forward(&self, hidden: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = hidden.shape();
        if s.len() != 3 {
            return Err(invalid(format!("duration predictor input {s:?}")));
        }
        let mut x = hidden.transpose(1, 2)?;
        for (i, b) in self.blocks.iter().enumerate() {
            x = b.sep.forward(&x)?;
            x = b.step.forward(&x)?;
            x = b.norm.forward(&x)?.relu();
            x = x.dropout(mode.dropout(self.dropout, DROPOUT_LAYER_BASE + i as u64))?;
        }
        let y = self.out.forward(&x.transpose(1, 2)?)?.softplus();
        Ok(y.reshape(&[s[0], s[1]])?)
    }
}

/// Squared error between `log1p` of predicted and target durations, averaged over all slots.
pub fn duration_loss(pred: &Tensor, target: &[Vec<usize>]) -> Result<Tensor> {
    let s = pred.shape();
    if s.len() != 2 || s[0] != target.len() || target.iter().any(|t| t.len() != s[1]) {
        return Err(invalid(format!("duration prediction {s:?} does not match targets")));
    }
    let t: Vec<f64> = target.iter().flatten().map(|&d| (d as f64).ln_1p()).collect();
    Ok(pred.log1p().mse(&Tensor::new(t, s)?)?)
}

/// Round half up; an all-zero result gets one frame in slot 0.
pub fn round_durations(pred: &[f64]) -> Vec<usize> {
    let mut d: Vec<usize> = pred.iter().map(|&v| (v.max(0.0) + 0.5).floor() as usize).collect();
    if !d.is_empty() && d.iter().all(|&x| x == 0) {
        d[0] = 1;
    }
    d
}

/// Linear map from the slot hidden size to the mel generator's input size.
#[derive(Debug, Clone)]
pub struct Projection {
    pub linear: Linear,
}

impl Projection {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize, out: usize) -> Self {
        Projection { linear: Linear::new(store, seed, &format!("{prefix}/linear"), dim, out, Init::Xavier) }
    }

    pub fn forward(&self, hidden: &Tensor) -> Result<Tensor> {
        self.linear.forward(hidden)
    }
}

/// Indices that repeat row `i` `durations[i]` times.
pub fn expansion_indices(durations: &[usize]) -> Vec<usize> {
    durations.iter().enumerate().flat_map(|(i, &d)| std::iter::repeat_n(i, d)).collect()
}

/// Repeats row `i` of an `[L, D']` matrix `durations[i]` times.
pub fn regulate_length(projected: &Tensor, durations: &[usize]) -> Result<Tensor> {
    let s = projected.shape();
    if s.len() != 2 || s[0] != durations.len() {
        return Err(invalid(format!("cannot regulate {s:?} with {} durations", durations.len())));
    }
    if durations.iter().sum::<usize>() == 0 {
        return Err(invalid("all durations are zero"));
    }
    Ok(projected.gather(&expansion_indices(durations), 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use its_tensor::grad_check;

    #[test]
    fn rounding_rules() {
        assert_eq!(round_durations(&[1.4, 0.2, 2.6]), vec![1, 0, 3]);
        assert_eq!(round_durations(&[0.1, 0.1]), vec![1, 0]);
        assert_eq!(round_durations(&[0.5]), vec![1]);
    }

    #[test]
    fn duration_loss_values() {
        let p = Tensor::new(vec![3.0, 0.0], &[1, 2]).unwrap();
        assert_eq!(duration_loss(&p, &[vec![3, 0]]).unwrap().item(), 0.0);
        let p = Tensor::new(vec![std::f64::consts::E - 1.0], &[1, 1]).unwrap();
        assert!((duration_loss(&p, &[vec![0]]).unwrap().item() - 1.0).abs() < 1e-12);
        assert!(duration_loss(&p, &[vec![0, 1]]).is_err());
    }

    #[test]
    fn predictor_outputs_are_non_negative() {
        let mut store = ParamStore::new();
        let dp = DurationPredictor::new(&mut store, 3, "duration", 8, &DurationConfig::default());
        let h = its_tensor::init::normal(&[2, 26, 8], 3.0, &mut its_tensor::init::stream_rng(1, "h"));
        let y = dp.forward(&h, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 26]);
        assert!(y.to_vec().iter().all(|&v| v >= 0.0));
        assert_eq!(y.to_vec(), dp.forward(&h, Mode::Eval).unwrap().to_vec());
    }

    #[test]
    fn regulate_example() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0], &[3, 1]).unwrap();
        assert_eq!(regulate_length(&x, &[2, 0, 3]).unwrap().to_vec(), vec![1.0, 1.0, 3.0, 3.0, 3.0]);
        assert_eq!(regulate_length(&x, &[1, 1, 1]).unwrap().to_vec(), x.to_vec());
        assert!(regulate_length(&x, &[0, 0, 0]).is_err());
    }

    #[test]
    fn projection_shape_and_zero_weights() {
        let mut store = ParamStore::new();
        let p = Projection::new(&mut store, 0, "projection", 64, 32);
        let h = Tensor::ones(&[1, 26, 64]);
        assert_eq!(p.forward(&h).unwrap().shape(), &[1, 26, 32]);
        p.linear.weight.assign(vec![0.0; 64 * 32]).unwrap();
        assert!(p.forward(&h).unwrap().to_vec().iter().all(|&v| v == 0.0));
        let w = its_tensor::init::normal(&[32, 64], 0.2, &mut its_tensor::init::stream_rng(2, "w"));
        let x = its_tensor::init::normal(&[3, 64], 1.0, &mut its_tensor::init::stream_rng(3, "x"));
        let e = grad_check(|t| Ok(x.linear(t, None)?.mul(&x.linear(t, None)?)?.sum()), &w, 1e-5).unwrap();
        assert!(e < 1e-5);
    }
}
