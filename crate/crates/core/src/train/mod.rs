//! Training loop, learning-rate schedule, early stopping, metrics and
//! routing/over-smoothing diagnostics.

mod config;
mod diagnostics;
mod metrics;
mod schedule;
mod trainer;

pub use config::{DataSource, Splits, TrainConfig};
pub use diagnostics::{
    expert_distribution_report, mean_pairwise_cosine, oversmoothing_diagnostic, ExpertReport, LayerSmoothness,
    COLLAPSE_SHARE, DEFAULT_REPORT_THRESHOLD,
};
pub use metrics::{accuracy, mae, roc_auc, MetricKind, MetricsReport};
pub use schedule::{EarlyStopping, PlateauScheduler, MIN_IMPROVEMENT};
pub use trainer::{batches, evaluate, train, train_prepared, EpochLog, StopReason, TrainOutcome, Trainer};

/// Caps the global thread pool at `SEA_THREADS` when that variable is set.
/// Returns the cap, if any. Call before any parallel work.
pub fn init_threads_from_env() -> crate::Result<Option<usize>> {
    let Ok(raw) = std::env::var("SEA_THREADS") else { return Ok(None) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| crate::SeaError::Config(format!("SEA_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::SeaError::Config(format!("thread pool: {e}")))?;
    Ok(Some(n))
}
