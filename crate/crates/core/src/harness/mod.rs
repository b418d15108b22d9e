//! Experiment harness: configuration, datasets, the training loop and the
//! metrics CSV.

pub mod config;
pub mod data;
pub mod metrics;
pub mod train;

pub use config::{lr_at_epoch, ConfigMap, DataSource, DatasetSpec, LrSchedule, TrainConfig};
pub use data::{load_dataset, load_idx, make_synthetic, normalize, parse_idx, Dataset, Split};
pub use metrics::{
    csv_header, emit_metrics, parse_metrics, write_metrics, MetricsRecord, SplitKind,
};
pub use train::{evaluate, run_training, Evaluation, StepTrace, TrainOutcome, Trainer};
