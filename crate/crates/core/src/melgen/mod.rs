//! VAE mel-spectrogram generator conditioned on the expanded sequence.
//!
//! Frame-rate inputs are padded to a multiple of the stride by repeating
//! their final frame; the decoder trims the pad again.

pub mod audio;
pub mod flow;
pub mod wavenet;

use its_tensor::init::standard_normal;
use its_tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{Conv1d, Init, LayerNorm, TransposedConv1d};
use flow::CouplingFlow;
use wavenet::WaveNet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelGenConfig {
    pub n_mels: usize,
    pub cond_dim: usize,
    pub channels: usize,
    pub latent: usize,
    pub stride: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub flow: bool,
}

impl Default for MelGenConfig {
    fn default() -> Self {
        MelGenConfig { n_mels: 32, cond_dim: 32, channels: 64, latent: 16, stride: 4, kernel: 3, dilations: vec![1, 2, 4, 8], flow: false }
    }
}

/// Posterior mean and log standard deviation, each `[1, Z, T/stride]`.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mu: Tensor,
    pub log_sigma: Tensor,
    /// Frames appended to reach a multiple of the stride.
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct MelGen {
    pub cfg: MelGenConfig,
    enc_in: Conv1d,
    enc_cond: Conv1d,
    enc_norm: LayerNorm,
    enc_wavenet: WaveNet,
    enc_out: Conv1d,
    dec_in: Conv1d,
    dec_cond: Conv1d,
    dec_wavenet: WaveNet,
    dec_up: TransposedConv1d,
    dec_norm: LayerNorm,
    frame_cond: Conv1d,
    dec_out: Conv1d,
    pub flow: Option<CouplingFlow>,
}

/// Time indices `0..t` followed by `pad` copies of `t - 1`.
fn padded_indices(t: usize, stride: usize) -> (Vec<usize>, usize) {
    let padded = t.div_ceil(stride) * stride;
    ((0..padded).map(|i| i.min(t - 1)).collect(), padded - t)
}

impl MelGen {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, cfg: &MelGenConfig) -> Result<Self> {
        let (f, d, c, z, s) = (cfg.n_mels, cfg.cond_dim, cfg.channels, cfg.latent, cfg.stride);
        let n = |x: &str| format!("{prefix}/{x}");
        let strided = |store: &mut ParamStore, name: &str, cin: usize| Conv1d::new(store, seed, name, cin, c, s, s, 0, 1, Init::Kaiming);
        let flow = if cfg.flow { Some(CouplingFlow::new(store, seed, &n("flow"), z, c)?) } else { None };
        Ok(MelGen {
            cfg: cfg.clone(),
            enc_in: strided(store, &n("encoder/in"), f),
            enc_cond: strided(store, &n("encoder/cond"), d),
            enc_norm: LayerNorm::new(store, &n("encoder/norm"), c, 1),
            enc_wavenet: WaveNet::new(store, seed, &n("encoder/wavenet"), c, cfg.kernel, &cfg.dilations),
            enc_out: Conv1d::pointwise(store, seed, &n("encoder/out"), c, 2 * z, Init::Xavier),
            dec_in: Conv1d::pointwise(store, seed, &n("decoder/in"), z, c, Init::Xavier),
            dec_cond: strided(store, &n("decoder/cond"), d),
            dec_wavenet: WaveNet::new(store, seed, &n("decoder/wavenet"), c, cfg.kernel, &cfg.dilations),
            dec_up: TransposedConv1d::new(store, seed, &n("decoder/up"), c, c, s),
            dec_norm: LayerNorm::new(store, &n("decoder/norm"), c, 1),
            frame_cond: Conv1d::same(store, seed, &n("decoder/frame_cond"), d, c, 3, 1, Init::Kaiming),
            dec_out: Conv1d::pointwise(store, seed, &n("decoder/out"), c, f, Init::Xavier),
            flow,
        })
    }

    /// `[T, D']` expanded sequence to channel-first `[1, D', T_padded]`.
    fn cond_frames(&self, cond: &Tensor) -> Result<(Tensor, usize)> {
        let s = cond.shape();
        if s.len() != 2 || s[1] != self.cfg.cond_dim || s[0] == 0 {
            return Err(invalid(format!("conditioning shape {s:?}, expected [T, {}]", self.cfg.cond_dim)));
        }
        let (idx, pad) = padded_indices(s[0], self.cfg.stride);
        let c = cond.gather(&idx, 0)?.transpose(0, 1)?;
        let t = c.shape()[1];
        Ok((c.reshape(&[1, self.cfg.cond_dim, t])?, pad))
    }

    pub fn latent_frames(&self, frames: usize) -> usize {
        frames.div_ceil(self.cfg.stride)
    }

    /// Posterior over latents given a `[1, F, T]` mel and its `[T, D']` conditioning.
    pub fn encode(&self, mel: &Tensor, cond: &Tensor) -> Result<Posterior> {
        let ms = mel.shape();
        if ms.len() != 3 || ms[0] != 1 || ms[1] != self.cfg.n_mels {
            return Err(invalid(format!("mel shape {ms:?}, expected [1, {}, T]", self.cfg.n_mels)));
        }
        if ms[2] != cond.shape()[0] {
            return Err(invalid(format!("mel has {} frames but conditioning has {}", ms[2], cond.shape()[0])));
        }
        let (c, pad) = self.cond_frames(cond)?;
        let (idx, _) = padded_indices(ms[2], self.cfg.stride);
        let m = mel.gather(&idx, 2)?;
        let cd = self.enc_cond.forward(&c)?;
        let h = self.enc_norm.forward(&self.enc_in.forward(&m)?.relu())?;
        let h = self.enc_wavenet.forward(&h, &cd)?;
        let out = self.enc_out.forward(&h)?;
        let z = self.cfg.latent;
        Ok(Posterior { mu: out.slice(1, 0, z)?, log_sigma: out.slice(1, z, 2 * z)?, pad })
    }

    /// Decodes `[1, Z, ceil(T/stride)]` latents into a `[1, F, T]` mel.
    pub fn decode(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let (c, _) = self.cond_frames(cond)?;
        let t = cond.shape()[0];
        let zs = z.shape();
        if zs != [1, self.cfg.latent, self.latent_frames(t)] {
            return Err(invalid(format!("latent shape {zs:?} for {t} frames")));
        }
        let cd = self.dec_cond.forward(&c)?;
        let h = self.dec_wavenet.forward(&self.dec_in.forward(z)?, &cd)?;
        let up = self.dec_norm.forward(&self.dec_up.forward(&h)?.relu())?;
        let h = up.add(&self.frame_cond.forward(&c)?)?.relu();
        Ok(self.dec_out.forward(&h)?.slice(2, 0, t)?)
    }

    /// Reparameterized sample `mu + sigma * eps` with `eps` drawn from `seed`.
    pub fn sample_posterior(&self, post: &Posterior, seed: u64) -> Result<(Tensor, Tensor)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = Tensor::new(standard_normal(post.mu.numel(), &mut rng), post.mu.shape())?;
        let z = post.mu.add(&post.log_sigma.exp().mul(&eps)?)?;
        Ok((z, eps))
    }

    /// Prior latent for `frames` output frames; `seed = None` gives the prior mean.
    pub fn sample_prior(&self, frames: usize, seed: Option<u64>) -> Result<Tensor> {
        if frames == 0 {
            return Err(invalid("cannot sample a latent for zero frames"));
        }
        let shape = [1, self.cfg.latent, self.latent_frames(frames)];
        let n = shape.iter().product();
        let u = match seed {
            Some(s) => Tensor::new(standard_normal(n, &mut ChaCha8Rng::seed_from_u64(s)), &shape)?,
            None => Tensor::zeros(&shape),
        };
        match &self.flow {
            Some(f) => f.inverse(&u),
            None => Ok(u),
        }
    }

    /// KL term of the loss, mean-reduced over latent elements.
    ///
    /// With a flow prior this is the single-sample estimate
    /// `log q(z) - log p(z)` at the reparameterized sample.
    pub fn kl(&self, post: &Posterior, z: &Tensor, eps: &Tensor) -> Result<Tensor> {
        match &self.flow {
            None => Ok(post.mu.kl_diag_gaussian_vs_standard_normal(&post.log_sigma)?),
            Some(f) => {
                let u = f.forward(z)?;
                let log_q = post.log_sigma.neg().sub(&eps.mul(eps)?.scale(0.5))?;
                let log_p = u.mul(&u)?.scale(-0.5);
                Ok(log_q.sub(&log_p)?.mean())
            }
        }
    }
}

/// `L1(mel_hat, mel) + kl_weight * KL(q || N(0, I))`, each mean-reduced.
pub fn melgen_loss(mel_hat: &Tensor, mel: &Tensor, post: &Posterior, kl_weight: f64) -> Result<Tensor> {
    let recon = mel_hat.l1(mel)?;
    let kl = post.mu.kl_diag_gaussian_vs_standard_normal(&post.log_sigma)?;
    Ok(recon.add(&kl.scale(kl_weight))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use its_tensor::init::{normal, stream_rng};

    fn model(flow: bool) -> (ParamStore, MelGen) {
        let mut store = ParamStore::new();
        let cfg = MelGenConfig { flow, ..MelGenConfig::default() };
        let m = MelGen::new(&mut store, 5, "melgen", &cfg).unwrap();
        (store, m)
    }

    fn cond(t: usize, seed: u64) -> Tensor {
        normal(&[t, 32], 1.0, &mut stream_rng(seed, "cond"))
    }

    #[test]
    fn encode_shapes_and_padding() {
        let (_, m) = model(false);
        let post = m.encode(&Tensor::zeros(&[1, 32, 40]), &cond(40, 0)).unwrap();
        assert_eq!(post.mu.shape(), &[1, 16, 10]);
        assert_eq!(post.pad, 0);
        let post = m.encode(&Tensor::zeros(&[1, 32, 41]), &cond(41, 0)).unwrap();
        assert_eq!(post.mu.shape(), &[1, 16, 11]);
        assert_eq!(post.log_sigma.shape(), &[1, 16, 11]);
        assert_eq!(post.pad, 3);
        assert!(m.encode(&Tensor::zeros(&[1, 32, 41]), &cond(40, 0)).is_err());
    }

    #[test]
    fn decode_restores_frame_count() {
        let (_, m) = model(false);
        for t in [1, 7, 40, 41] {
            let z = m.sample_prior(t, Some(3)).unwrap();
            assert_eq!(m.decode(&z, &cond(t, 1)).unwrap().shape(), &[1, 32, t]);
        }
        assert!(m.decode(&Tensor::zeros(&[1, 16, 9]), &cond(40, 1)).is_err());
    }

    #[test]
    fn zero_latent_output_depends_on_conditioning() {
        let (_, m) = model(false);
        let z = m.sample_prior(12, None).unwrap();
        let a = m.decode(&z, &cond(12, 1)).unwrap().to_vec();
        let b = m.decode(&z, &cond(12, 2)).unwrap().to_vec();
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn loss_closed_forms() {
        let mel = Tensor::ones(&[1, 2, 3]);
        let post = Posterior { mu: Tensor::zeros(&[1, 2, 1]), log_sigma: Tensor::zeros(&[1, 2, 1]), pad: 0 };
        assert_eq!(melgen_loss(&mel, &mel, &post, 0.5).unwrap().item(), 0.0);
        let one = Tensor::zeros(&[1, 1, 1]);
        let post = Posterior { mu: Tensor::ones(&[1, 1, 1]), log_sigma: Tensor::zeros(&[1, 1, 1]), pad: 0 };
        assert!((melgen_loss(&one, &one, &post, 1.0).unwrap().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn prior_is_seeded() {
        let (_, m) = model(true);
        let a = m.sample_prior(20, Some(9)).unwrap().to_vec();
        assert_eq!(a, m.sample_prior(20, Some(9)).unwrap().to_vec());
        assert_ne!(a, m.sample_prior(20, Some(10)).unwrap().to_vec());
    }

    #[test]
    fn flow_roundtrip_and_unit_jacobian() {
        let (_, m) = model(true);
        let f = m.flow.as_ref().unwrap();
        let z = normal(&[1, 16, 5], 1.0, &mut stream_rng(4, "z"));
        let back = f.inverse(&f.forward(&z).unwrap()).unwrap().to_vec();
        let fwd = f.forward(&f.inverse(&z).unwrap()).unwrap().to_vec();
        for ((a, b), c) in z.to_vec().iter().zip(&back).zip(&fwd) {
            assert!((a - b).abs() < 1e-6 && (a - c).abs() < 1e-6);
        }
        assert_eq!(f.log_det(&z), 0.0);

        // numerical Jacobian of a small latent; |det| must be one
        let z = normal(&[1, 4, 1], 1.0, &mut stream_rng(5, "z"));
        let mut store = ParamStore::new();
        let small = CouplingFlow::new(&mut store, 2, "f", 4, 8).unwrap();
        let base = z.to_vec();
        let mut jac = vec![vec![0.0; 4]; 4];
        for j in 0..4 {
            let mut hi = base.clone();
            let mut lo = base.clone();
            hi[j] += 1e-6;
            lo[j] -= 1e-6;
            let yh = small.forward(&Tensor::new(hi, &[1, 4, 1]).unwrap()).unwrap().to_vec();
            let yl = small.forward(&Tensor::new(lo, &[1, 4, 1]).unwrap()).unwrap().to_vec();
            for i in 0..4 {
                jac[i][j] = (yh[i] - yl[i]) / 2e-6;
            }
        }
        assert!((determinant(jac).abs() - 1.0).abs() < 1e-6);
    }

    fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            if p != c {
                a.swap(p, c);
                det = -det;
            }
            det *= a[c][c];
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        det
    }
}
