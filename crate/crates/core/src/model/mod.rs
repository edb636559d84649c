//! The image channel: the improved residual classifier, its training
//! harness, and evaluation metrics.

mod arch;
mod metrics;
mod train;

pub use arch::{build, ArchConfig, ForwardCache, LongRange, Model};
pub use metrics::{
    metrics, roc_auc, roc_auc_per_category, ClassMetrics, ConfusionMatrix, MetricsReport,
    RocCurve, RocPoint,
};
pub use train::{evaluate, train, EpochStats, Evaluation, TrainHistory, TrainRun};
