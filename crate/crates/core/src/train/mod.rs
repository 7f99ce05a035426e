//! Training: configuration, optimization, the training loop, evaluation,
//! checkpointing and reporting.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod optim;
pub mod report;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{Ablation, ConfigError, TrainConfig};
pub use eval::{evaluate_checkpoint, evaluate_set, CategoryScore, EvalError, EvalSet, EvalSummary};
pub use optim::{poly_lr, SgdMomentum};
pub use report::{histogram_report, runs_report, HistogramReport, RetainedFractions};
pub use trainer::{train, EpochRecord, MetricRecord, TrainError, TrainOutcome};

/// Caps rayon's worker count from the `DENOISE_SEG_THREADS` environment
/// variable. Call once at process start; later calls are no-ops.
pub fn init_threads_from_env() {
    if let Ok(v) = std::env::var("DENOISE_SEG_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
