//! Optimization, evaluation, hyperparameter search, and ablation sweeps.

mod ablation;
mod config;
mod metrics;
mod optim;
mod search;
mod student_only;
mod train;

pub use ablation::{run_ablation, AblationTable, Arm};
pub use config::{TrainConfig, ViewSet};
pub use metrics::{write_metrics_csv, write_summary_json, Checkpoint};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState};
pub use search::{select_hyperparameters, SearchGrid, SearchResult};
pub use student_only::train_student_only;
pub use train::{
    evaluate, query_logits, teacher_diagnostics, train, EpochRecord, Metrics, Summary, TrainOutcome,
    CHUNK, MODE_BASELINE, MODE_TOGA,
};
