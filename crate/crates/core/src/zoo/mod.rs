//! Architecture presets, model building, parameter accounting and filter export.

pub mod arch;
pub mod export;
pub mod model;
pub mod summary;

pub use arch::{preset, ArchSpec, StageSpec, StemSpec, PRESETS};
pub use export::export_first_conv_filters;
pub use model::{build, Features, Model};
pub use summary::{param_count, summarize, ModelSummary, SummaryRow};
