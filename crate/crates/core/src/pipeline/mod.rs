//! Multi-stage training, model assembly and inference for the end-to-end
//! system and the recognize-then-synthesize baseline.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod synth;
pub mod train;

pub use augment::{augment, AugmentConfig};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{ComputePrecision, LinguisticConfig, LossWeights, LrSchedule, ModelConfig, Stage, TrainConfig};
pub use model::{Backend, EncoderModel, ItsModel, TtsModel};
pub use synth::{recognize, synthesize_e2e, synthesize_non_e2e, synthesize_tts, Synthesis};
pub use train::{
    expansion_metrics, recognition_metrics, thread_count, train, train_encoder, train_its, train_tts_baseline, ExpansionMetrics, Items,
    LogRecord, RecognitionMetrics, TrainOptions, TrainOutcome,
};
