pub mod config;
pub mod eval;
pub mod trainer;

pub use config::{Inference, Mode, TrainConfig};
pub use eval::{
    ablation_relative_tolerance, accuracy_from_predictions, benchmark_inference, evaluate, AblationReport,
    BenchStats, EvalMetrics, SampleEval,
};
pub use trainer::{sample_gradients, train, EpochMetrics, SampleGrads, TrainOutcome};
