//! Image encoder: a small strided CNN, global mean pooling, one hidden
//! layer per output slot and a classifier shared by all slots.

use its_tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{Phoneme, SlotSeq, WordImage, L, P};
use crate::error::{invalid, Result};
use crate::nn::{Conv2d, Init, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv_channels: Vec<usize>,
    /// Per-slot hidden size D.
    pub hidden: usize,
    pub slots: usize,
    /// Append normalized x and y coordinate planes to the input.
    pub coord_channels: bool,
    /// Width of a 1x1 conv applied before pooling; 0 pools the last conv directly.
    pub pool_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { height: 32, width: 96, channels: 1, conv_channels: vec![16, 32, 64, 64], hidden: 64, slots: L, coord_channels: true, pool_channels: 256 }
    }
}

pub const CLASSES: usize = P + 1;

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    convs: Vec<Conv2d>,
    expand: Option<Conv2d>,
    /// All per-slot hidden layers stacked into one `pooled -> L*D` map.
    slot_hidden: Linear,
    classifier: Linear,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, seed: u64, cfg: &EncoderConfig) -> Encoder {
        let mut convs = Vec::new();
        let mut cin = cfg.channels + if cfg.coord_channels { 2 } else { 0 };
        for (i, &c) in cfg.conv_channels.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            convs.push(Conv2d::new(store, seed, &format!("encoder/conv{i}"), cin, c, 3, stride));
            cin = c;
        }
        let expand = (cfg.pool_channels > 0).then(|| {
            let e = Conv2d::new(store, seed, "encoder/expand", cin, cfg.pool_channels, 1, 1);
            cin = cfg.pool_channels;
            e
        });
        let slot_hidden = Linear::new(store, seed, "encoder/slots", cin, cfg.slots * cfg.hidden, Init::Kaiming);
        let classifier = Linear::new(store, seed, "encoder/classifier", cfg.hidden, CLASSES, Init::Xavier);
        Encoder { cfg: cfg.clone(), convs, expand, slot_hidden, classifier }
    }

    /// Stacks images into `[B, C, H, W]`, standardizing each to zero mean and unit
    /// variance with the text brighter than the background.
    pub fn batch_images(&self, images: &[&WordImage]) -> Result<Tensor> {
        let (h, w, c) = (self.cfg.height, self.cfg.width, self.cfg.channels);
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            if img.shape() != [h, w, c] {
                return Err(invalid(format!("image shape {:?} does not match encoder {:?}", img.shape(), [h, w, c])));
            }
            let n = img.pixels.len() as f64;
            let mean = img.pixels.iter().sum::<f64>() / n;
            let var = img.pixels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            // background pixels are the majority, so the median tells the polarity
            let mut sorted = img.pixels.clone();
            let mid = sorted.len() / 2;
            let median = *sorted.select_nth_unstable_by(mid, f64::total_cmp).1;
            let sign = if median > mean { -1.0 } else { 1.0 };
            let inv = sign / (var + 1e-4).sqrt();
            for ch in 0..c {
                data.extend((0..h * w).map(|i| (img.pixels[i * c + ch] - mean) * inv));
            }
        }
        Ok(Tensor::new(data, &[images.len(), c, h, w])?)
    }

    /// `[B, C, H, W]` images to the `[B, L, D]` hidden sequence.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != [self.cfg.channels, self.cfg.height, self.cfg.width] {
            return Err(invalid(format!("encoder input shape {s:?}")));
        }
        let mut h = if self.cfg.coord_channels { Tensor::concat(&[x.clone(), self.coords(s[0])?], 1)? } else { x.clone() };
        for conv in &self.convs {
            h = conv.forward(&h)?.relu();
        }
        if let Some(e) = &self.expand {
            h = e.forward(&h)?.relu();
        }
        let pooled = h.mean_pool()?;
        let slots = self.slot_hidden.forward(&pooled)?.relu();
        Ok(slots.reshape(&[s[0], self.cfg.slots, self.cfg.hidden])?)
    }

    /// `[b, 2, H, W]` planes holding each pixel's x and y in `[-1, 1]`.
    fn coords(&self, b: usize) -> Result<Tensor> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let axis = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
        let mut plane = Vec::with_capacity(2 * h * w);
        plane.extend((0..h * w).map(|i| axis(i % w, w)));
        plane.extend((0..h * w).map(|i| axis(i / w, h)));
        Ok(Tensor::new(plane.repeat(b), &[b, 2, h, w])?)
    }

    pub fn encode_images(&self, images: &[&WordImage]) -> Result<Tensor> {
        self.encode(&self.batch_images(images)?)
    }

    /// `[B, L, D]` hidden to `[B, L, P+1]` slot logits.
    pub fn classify(&self, hidden: &Tensor) -> Result<Tensor> {
        self.classifier.forward(hidden)
    }
}

/// Mean slot cross-entropy, ε slots included.
pub fn encoder_loss(logits: &Tensor, targets: &[&SlotSeq]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 3 || s[0] != targets.len() {
        return Err(invalid(format!("logits {s:?} for {} targets", targets.len())));
    }
    let mut ids = Vec::with_capacity(s[0] * s[1]);
    for t in targets {
        if t.symbols.len() != s[1] {
            return Err(invalid(format!("target has {} slots, logits {}", t.symbols.len(), s[1])));
        }
        ids.extend(t.ids());
    }
    Ok(logits.reshape(&[s[0] * s[1], s[2]])?.cross_entropy(&ids)?)
}

/// Per-slot argmax of an `L x (P+1)` row-major logit matrix.
pub fn slot_argmax(logits: &[f64], classes: usize) -> Vec<Phoneme> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            Phoneme(best as u8)
        })
        .collect()
}

/// Argmax per slot, truncated at the first ε.
pub fn decode_slots(logits: &[f64], classes: usize) -> Vec<Phoneme> {
    slot_argmax(logits, classes).into_iter().take_while(|p| !p.is_epsilon()).collect()
}
