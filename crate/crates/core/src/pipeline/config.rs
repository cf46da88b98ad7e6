use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::AudioConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::expansion::DurationConfig;
use crate::melgen::MelGenConfig;

use super::augment::AugmentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Encoder,
    Its,
    TtsBaseline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Encoder => "encoder",
            Stage::Its => "its",
            Stage::TtsBaseline => "tts_baseline",
        }
    }
}

/// Linear warm-up to `peak`, then cosine decay to `peak * final_fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub final_fraction: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { peak: 2e-3, warmup_steps: 100, final_fraction: 0.05 }
    }
}

impl LrSchedule {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let floor = self.peak * self.final_fraction;
        floor + (self.peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub ce: f64,
    pub dur: f64,
    pub mel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { ce: 1.0, dur: 1.0, mel: 1.0 }
    }
}

/// Front end of the baseline TTS: phoneme embedding plus a convolutional stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinguisticConfig {
    pub blocks: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl Default for LinguisticConfig {
    fn default() -> Self {
        LinguisticConfig { blocks: 4, kernel: 5, dropout: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub duration: DurationConfig,
    pub melgen: MelGenConfig,
    pub linguistic: LinguisticConfig,
    pub audio: AudioConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            duration: DurationConfig::default(),
            melgen: MelGenConfig::default(),
            linguistic: LinguisticConfig::default(),
            audio: AudioConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.melgen.n_mels != self.audio.n_mels {
            return bad(format!("melgen n_mels {} differs from audio n_mels {}", self.melgen.n_mels, self.audio.n_mels));
        }
        if self.encoder.hidden == 0 || self.encoder.slots == 0 || self.encoder.conv_channels.is_empty() {
            return bad("encoder needs hidden > 0, slots > 0 and at least one conv layer".into());
        }
        if self.duration.kernel % 2 == 0 || self.linguistic.kernel % 2 == 0 {
            return bad("duration and linguistic kernels must be odd".into());
        }
        if !(0.0..1.0).contains(&self.duration.dropout) || !(0.0..1.0).contains(&self.linguistic.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComputePrecision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    pub kl_weight: f64,
    /// Fraction of `steps` over which the KL weight ramps from 0 to `kl_weight`.
    pub kl_warmup: f64,
    pub loss_weights: LossWeights,
    pub manifest: PathBuf,
    /// Stage-1 checkpoint the ITS stage starts from.
    pub init_checkpoint: Option<PathBuf>,
    pub log_every: usize,
    /// Held-out evaluation interval; 0 evaluates only after the last step.
    pub eval_every: usize,
    pub precision: ComputePrecision,
    /// Image augmentation for the encoder stage; `null` disables it.
    pub augment: Option<AugmentConfig>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_stage(Stage::Encoder)
    }
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        let (steps, batch_size, lr) = match stage {
            Stage::Encoder => (2000, 16, LrSchedule { peak: 6e-3, warmup_steps: 100, final_fraction: 0.05 }),
            Stage::Its => (10000, 8, LrSchedule { peak: 2e-3, warmup_steps: 100, final_fraction: 0.05 }),
            Stage::TtsBaseline => (1500, 4, LrSchedule { peak: 2e-3, warmup_steps: 100, final_fraction: 0.05 }),
        };
        TrainConfig {
            stage,
            steps,
            batch_size,
            lr,
            seed: 7,
            kl_weight: 1e-2,
            kl_warmup: 0.1,
            loss_weights: LossWeights::default(),
            manifest: PathBuf::from("data/manifest.json"),
            init_checkpoint: None,
            log_every: 50,
            eval_every: 0,
            precision: ComputePrecision::F32,
            augment: (stage == Stage::Encoder).then(AugmentConfig::default),
            model: ModelConfig::default(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr.peak > 0.0) || !(0.0..=1.0).contains(&self.lr.final_fraction) {
            return bad("lr.peak must be positive and lr.final_fraction in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.kl_warmup) || self.kl_weight < 0.0 {
            return bad("kl_warmup must lie in [0, 1] and kl_weight must be non-negative");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        let w = self.loss_weights;
        match self.stage {
            Stage::Encoder if w.ce <= 0.0 => return bad("encoder stage needs loss_weights.ce > 0"),
            Stage::Its | Stage::TtsBaseline if w.dur <= 0.0 || w.mel <= 0.0 => {
                return bad("its and tts_baseline stages need loss_weights.dur and loss_weights.mel > 0")
            }
            _ => {}
        }
        if self.stage == Stage::Its && self.init_checkpoint.is_none() {
            return bad("its stage requires init_checkpoint pointing at an encoder checkpoint");
        }
        self.model.validate()
    }

    /// KL weight at `step` after the linear warm-up.
    pub fn kl_weight_at(&self, step: usize) -> f64 {
        let ramp = self.kl_warmup * self.steps as f64;
        if ramp <= 0.0 {
            self.kl_weight
        } else {
            self.kl_weight * ((step + 1) as f64 / ramp).min(1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule { peak: 1.0, warmup_steps: 10, final_fraction: 0.1 };
        assert!((s.at(0, 100) - 0.1).abs() < 1e-12);
        assert!((s.at(9, 100) - 1.0).abs() < 1e-12);
        assert!((s.at(10, 100) - 1.0).abs() < 1e-12);
        assert!((s.at(100, 100) - 0.1).abs() < 1e-12);
        assert!(s.at(50, 100) < s.at(20, 100));
    }

    #[test]
    fn its_needs_encoder_checkpoint() {
        let mut cfg = TrainConfig::for_stage(Stage::Its);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.init_checkpoint = Some("enc".into());
        cfg.validate().unwrap();
        cfg.loss_weights.mel = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"stage": "encoder", "stpes": 3}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"stage": "tts_baseline", "steps": 3}"#).unwrap();
        assert_eq!(ok.steps, 3);
    }

    #[test]
    fn kl_ramp() {
        let mut cfg = TrainConfig::for_stage(Stage::Its);
        cfg.steps = 100;
        cfg.kl_weight = 1.0;
        assert!((cfg.kl_weight_at(4) - 0.5).abs() < 1e-12);
        assert_eq!(cfg.kl_weight_at(50), 1.0);
    }
}
