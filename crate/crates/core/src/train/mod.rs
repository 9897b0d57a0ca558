//! SGD training with a step learning-rate schedule, top-k evaluation and
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, ManifestEntry};
pub use config::{lr_at_epoch, TrainConfig};
pub use metrics::{evaluate, label_rank, topk_from_logits, Metrics, TopK};
pub use optim::sgd_step;
pub use trainer::{train, EpochRecord, TrainLog, TrainOptions, METRICS_HEADER};
