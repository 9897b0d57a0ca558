//! Channel gates: squeeze-excitation (SE) and squeeze-aggregated-excitation (SaE).
//!
//! Both squeeze the feature map `u` to a per-channel descriptor with global
//! average pooling. SE passes it through one reducing FC; SaE passes it
//! through `cardinality` parallel reducing FCs whose outputs are merged by
//! concatenation or summation. A restoring FC and a sigmoid then produce one
//! gate per channel in `(0, 1)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{Mode, Module, Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::layers::Linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MergeMode {
    Concat,
    Sum,
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(MergeMode::Concat),
            "sum" => Ok(MergeMode::Sum),
            other => Err(Error::Config(format!("unknown merge mode {other:?} (expected concat|sum)"))),
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMode::Concat => "concat",
            MergeMode::Sum => "sum",
        })
    }
}

/// Where a block applies its gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GatePlacement {
    /// Gate the residual branch output before the skip addition.
    OnBranchOutput,
    /// Gate the block input before the residual branch.
    OnBranchInput,
}

impl FromStr for GatePlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output" | "on_branch_output" => Ok(GatePlacement::OnBranchOutput),
            "input" | "on_branch_input" => Ok(GatePlacement::OnBranchInput),
            other => Err(Error::Config(format!("unknown gate placement {other:?} (expected output|input)"))),
        }
    }
}

impl fmt::Display for GatePlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatePlacement::OnBranchOutput => "output",
            GatePlacement::OnBranchInput => "input",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SaEConfig {
    pub reduction: usize,
    pub cardinality: usize,
    pub merge: MergeMode,
    pub placement: GatePlacement,
}

impl Default for SaEConfig {
    /// Reduction 32, four concatenated branches, gating the branch output.
    fn default() -> Self {
        Self {
            reduction: 32,
            cardinality: 4,
            merge: MergeMode::Concat,
            placement: GatePlacement::OnBranchOutput,
        }
    }
}

impl SaEConfig {
    /// Width of each squeeze branch for a gated tensor of `width` channels.
    pub fn bottleneck(&self, width: usize) -> Result<usize> {
        if self.cardinality == 0 {
            return Err(Error::Config("SaE cardinality must be at least 1".into()));
        }
        bottleneck_width(width, self.reduction)
    }

    /// Input width of the excitation FC.
    pub fn merged_width(&self, width: usize) -> Result<usize> {
        let b = self.bottleneck(width)?;
        Ok(match self.merge {
            MergeMode::Concat => self.cardinality * b,
            MergeMode::Sum => b,
        })
    }

    /// Closed-form parameter count of a gate on `width` channels:
    /// `card * (C*C/r + C/r)` for the branches plus `M*C + C` for the excitation.
    pub fn gate_params(&self, width: usize) -> Result<usize> {
        let b = self.bottleneck(width)?;
        let m = self.merged_width(width)?;
        Ok(self.cardinality * (width * b + b) + (m * width + width))
    }
}

fn bottleneck_width(width: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || width == 0 || width % reduction != 0 {
        return Err(Error::Config(format!(
            "gated width {width} must be a positive multiple of the reduction {reduction}"
        )));
    }
    Ok(width / reduction)
}

/// Closed-form parameter count of an SE gate: `C*C/r + C/r + C/r*C + C`.
pub fn se_gate_params(width: usize, reduction: usize) -> Result<usize> {
    let b = bottleneck_width(width, reduction)?;
    Ok(width * b + b + b * width + width)
}

/// Explicit weights for an SaE gate; matrices are `in x out`.
#[derive(Debug, Clone)]
pub struct GateWeights<T> {
    pub branch_weights: Vec<(Tensor<T>, Option<Tensor<T>>)>,
    pub excite: (Tensor<T>, Option<Tensor<T>>),
}

#[derive(Debug, Clone)]
pub struct SeGate<T> {
    pub reduction: usize,
    pub squeeze: Linear<T>,
    pub excite: Linear<T>,
}

impl<T: Scalar> SeGate<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, width: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        let b = bottleneck_width(width, reduction)?;
        Ok(Self {
            reduction,
            squeeze: Linear::new(&format!("{name}.squeeze"), width, b, true, rng),
            excite: Linear::new(&format!("{name}.excite"), b, width, true, rng),
        })
    }

    pub fn from_weights(
        name: &str,
        reduction: usize,
        squeeze: (Tensor<T>, Option<Tensor<T>>),
        excite: (Tensor<T>, Option<Tensor<T>>),
    ) -> Result<Self> {
        let (width, b) = squeeze.0.dims2()?;
        if bottleneck_width(width, reduction)? != b || excite.0.shape() != [b, width] {
            return Err(Error::Config(format!(
                "SE weights {:?}/{:?} do not fit width {width} with reduction {reduction}",
                squeeze.0.shape(),
                excite.0.shape()
            )));
        }
        Ok(Self {
            reduction,
            squeeze: Linear::from_weights(&format!("{name}.squeeze"), squeeze.0, squeeze.1)?,
            excite: Linear::from_weights(&format!("{name}.excite"), excite.0, excite.1)?,
        })
    }

    pub fn width(&self) -> usize {
        self.squeeze.inputs()
    }

    /// `sigmoid(FC2(relu(FC1(pool(u)))))`, shape `N x C`.
    pub fn gates(&mut self, tape: &mut Tape<T>, u: Var) -> Result<Var> {
        let c = channels_of(tape, u)?;
        if c != self.width() {
            return Err(Error::dim("SE gate channel axis", self.width(), c));
        }
        let z = tape.global_avg_pool(u)?;
        let s = self.squeeze.forward(tape, z, Mode::Train)?;
        let s = tape.relu(s);
        let e = self.excite.forward(tape, s, Mode::Train)?;
        Ok(tape.sigmoid(e))
    }
}

fn channels_of<T: Scalar>(tape: &Tape<T>, u: Var) -> Result<usize> {
    let (_, c, _, _) = tape.value(u).dims4()?;
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct SaeGate<T> {
    pub cfg: SaEConfig,
    pub branches: Vec<Linear<T>>,
    pub excite: Linear<T>,
}

impl<T: Scalar> SaeGate<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, width: usize, cfg: SaEConfig, rng: &mut R) -> Result<Self> {
        let b = cfg.bottleneck(width)?;
        let m = cfg.merged_width(width)?;
        let branches = (0..cfg.cardinality)
            .map(|i| Linear::new(&format!("{name}.branch{i}"), width, b, true, rng))
            .collect();
        Ok(Self {
            cfg,
            branches,
            excite: Linear::new(&format!("{name}.excite"), m, width, true, rng),
        })
    }

    pub fn from_weights(name: &str, cfg: SaEConfig, weights: GateWeights<T>) -> Result<Self> {
        if weights.branch_weights.len() != cfg.cardinality {
            return Err(Error::Config(format!(
                "{} branch matrices for cardinality {}",
                weights.branch_weights.len(),
                cfg.cardinality
            )));
        }
        let first = weights
            .branch_weights
            .first()
            .ok_or_else(|| Error::Config("SaE gate needs at least one branch".into()))?;
        let (width, b) = first.0.dims2()?;
        if cfg.bottleneck(width)? != b {
            return Err(Error::Config(format!(
                "branch matrix {:?} does not match width {width} / reduction {}",
                first.0.shape(),
                cfg.reduction
            )));
        }
        if weights.branch_weights.iter().any(|(w, _)| w.shape() != [width, b]) {
            return Err(Error::Config("all SaE branch matrices must share one shape".into()));
        }
        let m = cfg.merged_width(width)?;
        if weights.excite.0.shape() != [m, width] {
            return Err(Error::Config(format!(
                "excite matrix must be {m}x{width} for merge={}, got {:?}",
                cfg.merge,
                weights.excite.0.shape()
            )));
        }
        let branches = weights
            .branch_weights
            .into_iter()
            .enumerate()
            .map(|(i, (w, bias))| Linear::from_weights(&format!("{name}.branch{i}"), w, bias))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            branches,
            excite: Linear::from_weights(&format!("{name}.excite"), weights.excite.0, weights.excite.1)?,
        })
    }

    pub fn width(&self) -> usize {
        self.excite.outputs()
    }

    /// Squeeze, `cardinality` relu FC branches, merge, excite, sigmoid.
    pub fn gates(&mut self, tape: &mut Tape<T>, u: Var) -> Result<Var> {
        let c = channels_of(tape, u)?;
        if c != self.width() {
            return Err(Error::dim("SaE gate channel axis", self.width(), c));
        }
        let z = tape.global_avg_pool(u)?;
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &mut self.branches {
            let b = branch.forward(tape, z, Mode::Train)?;
            outs.push(tape.relu(b));
        }
        let merged = match self.cfg.merge {
            MergeMode::Concat => tape.concat_channels(&outs)?,
            MergeMode::Sum => {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = tape.add(acc, o)?;
                }
                acc
            }
        };
        let e = self.excite.forward(tape, merged, Mode::Train)?;
        Ok(tape.sigmoid(e))
    }
}

/// A gate of either kind.
#[derive(Debug, Clone)]
pub enum Gate<T> {
    Se(SeGate<T>),
    Sae(SaeGate<T>),
}

impl<T: Scalar> Gate<T> {
    pub fn gates(&mut self, tape: &mut Tape<T>, u: Var) -> Result<Var> {
        match self {
            Gate::Se(g) => g.gates(tape, u),
            Gate::Sae(g) => g.gates(tape, u),
        }
    }

    /// The fully connected layers in order, for summaries.
    pub fn layers(&self) -> Vec<(&'static str, &Linear<T>)> {
        match self {
            Gate::Se(g) => vec![("squeeze", &g.squeeze), ("excite", &g.excite)],
            Gate::Sae(g) => g
                .branches
                .iter()
                .map(|b| ("branch", b))
                .chain(std::iter::once(("excite", &g.excite)))
                .collect(),
        }
    }
}

macro_rules! gate_module {
    ($ty:ident, |$s:ident| $params:expr, |$m:ident| $params_mut:expr) => {
        impl<T: Scalar> Module<T> for $ty<T> {
            /// Returns the gates (`N x C`) rather than the gated map.
            fn forward(&mut self, tape: &mut Tape<T>, x: Var, _mode: Mode) -> Result<Var> {
                self.gates(tape, x)
            }

            fn parameters(&self) -> Vec<&Parameter<T>> {
                let $s = self;
                $params
            }

            fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
                let $m = self;
                $params_mut
            }
        }
    };
}

gate_module!(
    SeGate,
    |s| s.squeeze.parameters().into_iter().chain(s.excite.parameters()).collect(),
    |m| m.squeeze.parameters_mut().into_iter().chain(m.excite.parameters_mut()).collect()
);

gate_module!(
    SaeGate,
    |s| s.branches.iter().flat_map(|b| b.parameters()).chain(s.excite.parameters()).collect(),
    |m| m
        .branches
        .iter_mut()
        .flat_map(|b| b.parameters_mut())
        .chain(m.excite.parameters_mut())
        .collect()
);

impl<T: Scalar> Module<T> for Gate<T> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, _mode: Mode) -> Result<Var> {
        self.gates(tape, x)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        match self {
            Gate::Se(g) => g.parameters(),
            Gate::Sae(g) => g.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        match self {
            Gate::Se(g) => g.parameters_mut(),
            Gate::Sae(g) => g.parameters_mut(),
        }
    }
}
