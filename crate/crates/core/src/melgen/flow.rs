//! Volume-preserving prior flow: one shift-only coupling layer followed by
//! a channel flip. Its Jacobian determinant is exactly one.

use its_tensor::{ParamStore, Tensor};

use crate::error::{invalid, Result};
use crate::nn::{Conv1d, Init};

#[derive(Debug, Clone)]
pub struct CouplingFlow {
    hidden: Conv1d,
    shift: Conv1d,
    half: usize,
}

impl CouplingFlow {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, latent: usize, channels: usize) -> Result<Self> {
        if latent < 2 || latent % 2 != 0 {
            return Err(invalid(format!("coupling flow needs an even latent size, got {latent}")));
        }
        let half = latent / 2;
        Ok(CouplingFlow {
            hidden: Conv1d::same(store, seed, &format!("{prefix}/hidden"), half, channels, 3, 1, Init::Kaiming),
            shift: Conv1d::pointwise(store, seed, &format!("{prefix}/shift"), channels, half, Init::Xavier),
            half,
        })
    }

    fn shift(&self, za: &Tensor) -> Result<Tensor> {
        self.shift.forward(&self.hidden.forward(za)?.relu())
    }

    fn flip(&self, z: &Tensor) -> Result<Tensor> {
        let idx: Vec<usize> = (0..2 * self.half).rev().collect();
        Ok(z.gather(&idx, 1)?)
    }

    /// Maps latent `z` (`[B, Z, T]`) towards the standard-normal base.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let h = self.half;
        let za = z.slice(1, 0, h)?;
        let zb = z.slice(1, h, 2 * h)?.add(&self.shift(&za)?)?;
        self.flip(&Tensor::concat(&[za, zb], 1)?)
    }

    pub fn inverse(&self, u: &Tensor) -> Result<Tensor> {
        let h = self.half;
        let y = self.flip(u)?;
        let za = y.slice(1, 0, h)?;
        let zb = y.slice(1, h, 2 * h)?.sub(&self.shift(&za)?)?;
        Ok(Tensor::concat(&[za, zb], 1)?)
    }

    /// Log-determinant of the forward Jacobian; shift coupling and permutation both preserve volume.
    pub fn log_det(&self, _z: &Tensor) -> f64 {
        0.0
    }
}
