//! Layers, channel gates and residual blocks.

pub mod block;
pub mod gate;
pub mod layers;
pub mod targets;

pub use block::{BlockMode, BlockSpec, Bottleneck, GateSpec};
pub use gate::{se_gate_params, Gate, GatePlacement, GateWeights, MergeMode, SaEConfig, SaeGate, SeGate};
pub use layers::{kaiming_normal, BatchNorm2d, Conv2d, Linear, Sequential};
pub use targets::{grad_target, GradTarget, TinyNet, GRAD_TARGETS};

/// Mean cross-entropy over a batch; see [`crate::kernels::loss::cross_entropy`].
pub use crate::kernels::loss::cross_entropy;
