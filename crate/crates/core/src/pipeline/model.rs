use its_tensor::{dropout_seed, no_grad, ParamStore, Tensor};

use crate::dataset::{MelSpectrogram, WordImage};
use crate::encoder::{Encoder, CLASSES};
use crate::error::{invalid, Result};
use crate::expansion::{duration_loss, regulate_length, round_durations, DurationPredictor, Projection};
use crate::melgen::{melgen_loss, MelGen};
use crate::nn::{Conv1d, Embedding, Init, LayerNorm, Mode};

use super::config::ModelConfig;

/// Dropout layer ids of the linguistic encoder.
const LINGUISTIC_DROPOUT_BASE: u64 = 200;
/// Stream ids for per-sample posterior noise.
const LATENT_STREAM_BASE: u64 = 1 << 20;

/// Everything downstream of the slot hidden sequence: duration predictor,
/// projection, length regulator and mel generator. Shared by both systems.
#[derive(Debug, Clone)]
pub struct Backend {
    pub duration: DurationPredictor,
    pub projection: Projection,
    pub melgen: MelGen,
}

/// Loss terms of one teacher-forced batch.
pub struct BackendLosses {
    pub duration: Tensor,
    /// Frame-weighted mean of the per-sample mel losses.
    pub mel: Tensor,
    pub l1: f64,
    pub kl: f64,
}

/// Output of one inference pass.
#[derive(Debug, Clone)]
pub struct Inference {
    pub mel: MelSpectrogram,
    pub raw_durations: Vec<f64>,
    pub durations: Vec<usize>,
}

fn row(hidden: &Tensor, i: usize) -> Result<Tensor> {
    let s = hidden.shape();
    Ok(hidden.slice(0, i, i + 1)?.reshape(&[s[1], s[2]])?)
}

impl Backend {
    pub fn new(store: &mut ParamStore, seed: u64, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.encoder.hidden;
        Ok(Backend {
            duration: DurationPredictor::new(store, seed, "duration", d, &cfg.duration),
            projection: Projection::new(store, seed, "projection", d, cfg.melgen.cond_dim),
            melgen: MelGen::new(store, seed, "melgen", &cfg.melgen)?,
        })
    }

    /// Teacher-forced losses for `[B, L, D]` hidden slots with ground-truth durations and mels.
    pub fn losses(
        &self,
        hidden: &Tensor,
        durations: &[Vec<usize>],
        mels: &[&MelSpectrogram],
        mode: Mode,
        kl_weight: f64,
    ) -> Result<BackendLosses> {
        let b = hidden.shape()[0];
        if durations.len() != b || mels.len() != b {
            return Err(invalid(format!("batch of {b} with {} durations and {} mels", durations.len(), mels.len())));
        }
        let pred = self.duration.forward(hidden, mode)?;
        let dur = duration_loss(&pred, durations)?;
        let total: usize = mels.iter().map(|m| m.frames).sum();
        let (seed, step) = match mode {
            Mode::Train { seed, step } => (seed, step),
            Mode::Eval => (0, 0),
        };
        let mut mel_loss: Option<Tensor> = None;
        let (mut l1, mut kl) = (0.0, 0.0);
        for i in 0..b {
            let m = mels[i];
            if durations[i].iter().sum::<usize>() != m.frames {
                return Err(invalid(format!("durations of sample {i} do not sum to its {} frames", m.frames)));
            }
            let cond = regulate_length(&self.projection.forward(&row(hidden, i)?)?, &durations[i])?;
            let target = Tensor::new(m.data.clone(), &[1, m.n_mels, m.frames])?;
            let post = self.melgen.encode(&target, &cond)?;
            let (z, eps) = self.melgen.sample_posterior(&post, dropout_seed(seed, LATENT_STREAM_BASE + i as u64, step))?;
            let mel_hat = self.melgen.decode(&z, &cond)?;
            let loss = match self.melgen.flow {
                None => melgen_loss(&mel_hat, &target, &post, kl_weight)?,
                Some(_) => mel_hat.l1(&target)?.add(&self.melgen.kl(&post, &z, &eps)?.scale(kl_weight))?,
            };
            let w = m.frames as f64 / total as f64;
            l1 += w * mel_hat.l1(&target)?.item();
            kl += w * self.melgen.kl(&post, &z, &eps)?.item();
            let term = loss.scale(w);
            mel_loss = Some(match mel_loss {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        Ok(BackendLosses { duration: dur, mel: mel_loss.ok_or_else(|| invalid("empty batch"))?, l1, kl })
    }

    /// Predicted durations for `[B, L, D]` hidden slots, before rounding.
    pub fn predict_durations(&self, hidden: &Tensor) -> Result<Vec<Vec<f64>>> {
        let s = hidden.shape();
        let pred = self.duration.forward(hidden, Mode::Eval)?.to_vec();
        Ok(pred.chunks(s[1]).map(<[f64]>::to_vec).collect())
    }

    /// Mel for one `[L, D]` hidden sequence expanded with `durations`, decoded from the prior mean.
    pub fn render(&self, hidden: &Tensor, durations: &[usize], audio: crate::dataset::AudioConfig) -> Result<MelSpectrogram> {
        let cond = regulate_length(&self.projection.forward(hidden)?, durations)?;
        let t = cond.shape()[0];
        let z = self.melgen.sample_prior(t, None)?;
        let mel = self.melgen.decode(&z, &cond)?;
        MelSpectrogram::new(mel.to_vec(), self.melgen.cfg.n_mels, t, audio)
    }

    /// Full inference from a `[1, L, D]` hidden sequence.
    pub fn infer(&self, hidden: &Tensor, audio: crate::dataset::AudioConfig) -> Result<Inference> {
        no_grad(|| {
            let raw = self.predict_durations(hidden)?.swap_remove(0);
            let durations = round_durations(&raw);
            let mel = self.render(&row(hidden, 0)?, &durations, audio)?;
            Ok(Inference { mel, raw_durations: raw, durations })
        })
    }
}

/// Stage-1 model: the image encoder with its slot classifier.
/// Also serves as the baseline's image-to-text recognizer.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub store: ParamStore,
    pub cfg: ModelConfig,
    pub encoder: Encoder,
}

impl EncoderModel {
    pub fn new(seed: u64, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, seed, &cfg.encoder);
        Ok(EncoderModel { store, cfg: cfg.clone(), encoder })
    }

    /// `[B, L, P+1]` slot logits.
    pub fn logits(&self, images: &[&WordImage]) -> Result<Tensor> {
        self.encoder.classify(&self.encoder.encode_images(images)?)
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }
}

/// The end-to-end image-to-speech model.
#[derive(Debug, Clone)]
pub struct ItsModel {
    pub store: ParamStore,
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub backend: Backend,
}

impl ItsModel {
    pub fn new(seed: u64, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, seed, &cfg.encoder);
        let backend = Backend::new(&mut store, seed, cfg)?;
        Ok(ItsModel { store, cfg: cfg.clone(), encoder, backend })
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }
}

#[derive(Debug, Clone)]
struct LinguisticBlock {
    conv: Conv1d,
    norm: LayerNorm,
}

/// Baseline TTS: phoneme-id embedding and a convolutional linguistic encoder
/// in front of the same backend the end-to-end model uses.
#[derive(Debug, Clone)]
pub struct TtsModel {
    pub store: ParamStore,
    pub cfg: ModelConfig,
    pub embedding: Embedding,
    blocks: Vec<LinguisticBlock>,
    pub backend: Backend,
}

impl TtsModel {
    pub fn new(seed: u64, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let d = cfg.encoder.hidden;
        let embedding = Embedding::new(&mut store, seed, "tts/embedding", CLASSES, d);
        let lc = &cfg.linguistic;
        let blocks = (0..lc.blocks)
            .map(|i| {
                let name = format!("tts/linguistic/block{i}");
                LinguisticBlock {
                    conv: Conv1d::same(&mut store, seed, &format!("{name}/conv"), d, d, lc.kernel, 1, Init::Kaiming),
                    norm: LayerNorm::new(&mut store, &format!("{name}/norm"), d, 1),
                }
            })
            .collect();
        let backend = Backend::new(&mut store, seed, cfg)?;
        Ok(TtsModel { store, cfg: cfg.clone(), embedding, blocks, backend })
    }

    /// Padded slot ids (`B` rows of `L`) to the `[B, L, D]` hidden sequence.
    pub fn hidden(&self, slots: &[Vec<usize>], mode: Mode) -> Result<Tensor> {
        let l = self.cfg.encoder.slots;
        if slots.is_empty() || slots.iter().any(|s| s.len() != l || s.iter().any(|&id| id >= CLASSES)) {
            return Err(invalid(format!("expected non-empty batch of {l} slot ids below {CLASSES}")));
        }
        let b = slots.len();
        let d = self.cfg.encoder.hidden;
        let ids: Vec<usize> = slots.iter().flatten().copied().collect();
        let mut x = self.embedding.forward(&ids)?.reshape(&[b, l, d])?.transpose(1, 2)?;
        for (i, blk) in self.blocks.iter().enumerate() {
            let h = blk.norm.forward(&blk.conv.forward(&x)?)?.relu();
            let h = h.dropout(mode.dropout(self.cfg.linguistic.dropout, LINGUISTIC_DROPOUT_BASE + i as u64))?;
            x = x.add(&h)?;
        }
        Ok(x.transpose(1, 2)?)
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{pad_to_slots, parse_phonemes, AudioConfig, L};

    fn small() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.melgen.channels = 8;
        cfg.melgen.latent = 4;
        cfg.melgen.cond_dim = 8;
        cfg.encoder.hidden = 8;
        cfg.encoder.conv_channels = vec![4, 4];
        cfg
    }

    #[test]
    fn inference_conserves_frames() {
        let m = ItsModel::new(1, &small()).unwrap();
        let h = its_tensor::init::normal(&[1, L, 8], 1.0, &mut its_tensor::init::stream_rng(0, "h"));
        let out = m.backend.infer(&h, AudioConfig::default()).unwrap();
        assert_eq!(out.mel.frames, out.durations.iter().sum::<usize>());
        assert_eq!(out.mel.data, m.backend.infer(&h, AudioConfig::default()).unwrap().mel.data);
    }

    #[test]
    fn tts_embeds_epsilon_and_trains_it() {
        let tts = TtsModel::new(2, &small()).unwrap();
        let slots = pad_to_slots(&parse_phonemes("K AE T").unwrap(), L).unwrap().ids();
        let h = tts.hidden(&[slots.clone()], Mode::Eval).unwrap();
        assert_eq!(h.shape(), &[1, L, 8]);
        let d: Vec<usize> = slots.iter().map(|&s| if s == 0 { 0 } else { 3 }).collect();
        let mel = MelSpectrogram::new(vec![0.5; 32 * 9], 32, 9, AudioConfig::default()).unwrap();
        let losses = tts.backend.losses(&h, &[d], &[&mel], Mode::Train { seed: 0, step: 0 }, 0.01).unwrap();
        losses.duration.add(&losses.mel).unwrap().backward().unwrap();
        let g = tts.embedding.table.grad().unwrap();
        assert!(g[..8].iter().any(|&v| v != 0.0), "epsilon row must receive gradient");
    }

    #[test]
    fn pipeline_has_more_parameters() {
        let cfg = ModelConfig::default();
        let its = ItsModel::new(0, &cfg).unwrap().param_count();
        let itt = EncoderModel::new(0, &cfg).unwrap().param_count();
        let tts = TtsModel::new(0, &cfg).unwrap().param_count();
        assert!(its < itt + tts);
    }
}
