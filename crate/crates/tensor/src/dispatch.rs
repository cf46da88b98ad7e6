//! Name-based op dispatch, used by the gradient suite and tooling that
//! builds graphs from data.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, TensorError};
use crate::ops::{Dropout, LAYERNORM_EPS};
use crate::tensor::Tensor;

macro_rules! op_kinds {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum OpKind { $($variant),* }

        impl OpKind {
            pub const ALL: &'static [OpKind] = &[$(OpKind::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(OpKind::$variant => $name),* }
            }
        }

        impl FromStr for OpKind {
            type Err = TensorError;
            fn from_str(s: &str) -> Result<OpKind> {
                match s {
                    $($name => Ok(OpKind::$variant),)*
                    other => Err(TensorError::UnknownOp(other.to_string())),
                }
            }
        }
    };
}

op_kinds! {
    Matmul => "matmul",
    Add => "add",
    Mul => "mul",
    Conv2d => "conv2d",
    Conv1d => "conv1d",
    SeparableConv1d => "separable_conv1d",
    TransposedConv1d => "transposed_conv1d",
    Linear => "linear",
    Relu => "relu",
    Softplus => "softplus",
    Sigmoid => "sigmoid",
    Tanh => "tanh",
    Layernorm => "layernorm",
    Dropout => "dropout",
    MeanPool => "mean_pool",
    CrossEntropy => "cross_entropy",
    Mse => "mse",
    L1 => "l1",
    KlDiagGaussian => "kl_diag_gaussian_vs_standard_normal",
    Exp => "exp",
    Log1p => "log1p",
    Gather => "gather",
    Concat => "concat",
    Slice => "slice",
    Reshape => "reshape",
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Attributes for [`forward_op`]. Unused fields are ignored by each kind.
#[derive(Debug, Clone)]
pub struct Attrs {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub axis: usize,
    pub eps: f64,
    pub start: usize,
    pub end: usize,
    pub shape: Vec<usize>,
    /// Class targets (`cross_entropy`) or selection indices (`gather`).
    pub indices: Vec<usize>,
    pub dropout: Dropout,
}

impl Default for Attrs {
    fn default() -> Self {
        Attrs {
            stride: 1,
            pad: 0,
            dilation: 1,
            axis: 0,
            eps: LAYERNORM_EPS,
            start: 0,
            end: 0,
            shape: Vec::new(),
            indices: Vec::new(),
            dropout: Dropout {
                p: 0.0,
                train: false,
                seed: 0,
                layer_id: 0,
                step: 0,
            },
        }
    }
}

fn arity(kind: OpKind, inputs: &[Tensor], min: usize, max: usize) -> Result<()> {
    if inputs.len() < min || inputs.len() > max {
        return Err(TensorError::Arity {
            op: kind.name(),
            expected: min,
            got: inputs.len(),
        });
    }
    Ok(())
}

/// Applies op `kind` to `inputs`. Optional trailing inputs (biases, affine
/// parameters) may be omitted.
pub fn forward_op(kind: OpKind, inputs: &[Tensor], attrs: &Attrs) -> Result<Tensor> {
    use OpKind::*;
    let opt = |i: usize| inputs.get(i);
    match kind {
        Matmul => {
            arity(kind, inputs, 2, 2)?;
            inputs[0].matmul(&inputs[1])
        }
        Add => {
            arity(kind, inputs, 2, 2)?;
            inputs[0].add(&inputs[1])
        }
        Mul => {
            arity(kind, inputs, 2, 2)?;
            inputs[0].mul(&inputs[1])
        }
        Conv2d => {
            arity(kind, inputs, 2, 3)?;
            inputs[0].conv2d(&inputs[1], opt(2), attrs.stride, attrs.pad)
        }
        Conv1d => {
            arity(kind, inputs, 2, 3)?;
            inputs[0].conv1d(&inputs[1], opt(2), attrs.stride, attrs.pad, attrs.dilation)
        }
        SeparableConv1d => {
            arity(kind, inputs, 3, 4)?;
            inputs[0].separable_conv1d(&inputs[1], &inputs[2], opt(3), attrs.pad)
        }
        TransposedConv1d => {
            arity(kind, inputs, 2, 3)?;
            inputs[0].transposed_conv1d(&inputs[1], opt(2), attrs.stride, attrs.pad)
        }
        Linear => {
            arity(kind, inputs, 2, 3)?;
            inputs[0].linear(&inputs[1], opt(2))
        }
        Relu => unary(kind, inputs, Tensor::relu),
        Softplus => unary(kind, inputs, Tensor::softplus),
        Sigmoid => unary(kind, inputs, Tensor::sigmoid),
        Tanh => unary(kind, inputs, Tensor::tanh),
        Exp => unary(kind, inputs, Tensor::exp),
        Log1p => unary(kind, inputs, Tensor::log1p),
        Layernorm => {
            arity(kind, inputs, 1, 3)?;
            inputs[0].layernorm(opt(1), opt(2), attrs.axis, attrs.eps)
        }
        Dropout => {
            arity(kind, inputs, 1, 1)?;
            inputs[0].dropout(attrs.dropout)
        }
        MeanPool => {
            arity(kind, inputs, 1, 1)?;
            inputs[0].mean_pool()
        }
        CrossEntropy => {
            arity(kind, inputs, 1, 1)?;
            inputs[0].cross_entropy(&attrs.indices)
        }
        Mse => {
            arity(kind, inputs, 2, 2)?;
            inputs[0].mse(&inputs[1])
        }
        L1 => {
            arity(kind, inputs, 2, 2)?;
            inputs[0].l1(&inputs[1])
        }
        KlDiagGaussian => {
            arity(kind, inputs, 2, 2)?;
            inputs[0].kl_diag_gaussian_vs_standard_normal(&inputs[1])
        }
        Gather => {
            arity(kind, inputs, 1, 1)?;
            inputs[0].gather(&attrs.indices, attrs.axis)
        }
        Concat => {
            arity(kind, inputs, 1, usize::MAX)?;
            Tensor::concat(inputs, attrs.axis)
        }
        Slice => {
            arity(kind, inputs, 1, 1)?;
            inputs[0].slice(attrs.axis, attrs.start, attrs.end)
        }
        Reshape => {
            arity(kind, inputs, 1, 1)?;
            inputs[0].reshape(&attrs.shape)
        }
    }
}

/// [`forward_op`] with the kind given by name.
pub fn forward_op_named(kind: &str, inputs: &[Tensor], attrs: &Attrs) -> Result<Tensor> {
    forward_op(kind.parse()?, inputs, attrs)
}

fn unary(kind: OpKind, inputs: &[Tensor], f: fn(&Tensor) -> Tensor) -> Result<Tensor> {
    arity(kind, inputs, 1, 1)?;
    Ok(f(&inputs[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for &k in OpKind::ALL {
            assert_eq!(k.name().parse::<OpKind>().unwrap(), k);
        }
        assert_eq!(OpKind::ALL.len(), 25);
    }

    #[test]
    fn unknown_kind_is_an_error() {
        let err = forward_op_named("conv3d", &[Tensor::scalar(1.0)], &Attrs::default()).unwrap_err();
        assert!(matches!(err, TensorError::UnknownOp(ref s) if s == "conv3d"));
    }

    #[test]
    fn arity_is_checked() {
        let err = forward_op(OpKind::Matmul, &[Tensor::zeros(&[2, 2])], &Attrs::default()).unwrap_err();
        assert!(matches!(err, TensorError::Arity { op: "matmul", .. }));
    }
}
