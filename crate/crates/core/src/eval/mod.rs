//! Phone error rate, word accuracy, the template-matching decode oracle,
//! speed benchmarks and the short-word data ablation.

pub mod ablation;
pub mod bench;
pub mod decode;
pub mod metrics;
pub mod report;

pub use ablation::{check_comparable, compare_systems, distribution_experiment, train_systems, AblationConfig, AblationReport, AblationRow, Claims, SystemPair};
pub use bench::{bench, median, BenchReport, BenchSystem, MIN_BENCH_IMAGES};
pub use decode::OracleDecoder;
pub use metrics::{edit_distance, per, word_accuracy};
pub use report::{evaluate_e2e, evaluate_pipeline, evaluate_tts, evaluate_with, EvalReport, Subset};
