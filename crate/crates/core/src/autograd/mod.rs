//! Reverse-mode differentiation over the kernels, the [`Module`] trait and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod module;
pub mod param;
pub mod tape;

pub use gradcheck::{grad_check, jitter_parameters, CheckLoss, GradCheckConfig, GradCheckReport, ParamCheck};
pub use module::{Mode, Module};
pub use param::{ParamId, Parameter};
pub use tape::{CustomOp, Gradients, Tape, Var};
