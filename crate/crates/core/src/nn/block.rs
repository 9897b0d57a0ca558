//! Bottleneck residual block in four flavours.
//!
//! ```text
//! plain       out = relu(x + F(x))
//! aggregated  same, with a grouped 3x3 convolution inside F
//! se / sae    out = relu(x + g(F(x)) * F(x))        gate on the branch output
//!             out = relu(x + F(g(x) * x))           gate on the block input
//! ```
//!
//! `F` is `conv1x1 -> bn -> relu -> conv3x3 -> bn -> relu -> conv1x1 -> bn`.
//! A 1x1 projection (conv + bn) replaces the identity skip whenever the
//! stride or channel count changes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{Mode, Module, Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::tensor::{Scalar, Tensor};

use super::gate::{Gate, GatePlacement, SaEConfig, SaeGate, SeGate};
use super::layers::{BatchNorm2d, Conv2d};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockMode {
    Plain,
    Aggregated,
    Se,
    Sae,
}

impl FromStr for BlockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(BlockMode::Plain),
            "aggregated" => Ok(BlockMode::Aggregated),
            "se" => Ok(BlockMode::Se),
            "sae" => Ok(BlockMode::Sae),
            other => Err(Error::Config(format!("unknown block mode {other:?}"))),
        }
    }
}

impl fmt::Display for BlockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockMode::Plain => "plain",
            BlockMode::Aggregated => "aggregated",
            BlockMode::Se => "se",
            BlockMode::Sae => "sae",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateSpec {
    None,
    Se { reduction: usize, placement: GatePlacement },
    Sae(SaEConfig),
}

impl GateSpec {
    pub fn placement(&self) -> Option<GatePlacement> {
        match self {
            GateSpec::None => None,
            GateSpec::Se { placement, .. } => Some(*placement),
            GateSpec::Sae(cfg) => Some(cfg.placement),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub groups: usize,
    pub gate: GateSpec,
    /// Force an identity skip even when shapes change (forward then fails).
    pub identity_shortcut: bool,
}

impl BlockSpec {
    pub fn new(in_channels: usize, mid_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            mid_channels,
            out_channels,
            stride: 1,
            groups: 1,
            gate: GateSpec::None,
            identity_shortcut: false,
        }
    }

    /// The block for `mode`; `groups` only applies to aggregated blocks and
    /// `sae` supplies the reduction (and, for SaE, the full gate config).
    pub fn for_mode(mode: BlockMode, in_channels: usize, mid_channels: usize, out_channels: usize, groups: usize, sae: SaEConfig) -> Self {
        let base = Self::new(in_channels, mid_channels, out_channels);
        match mode {
            BlockMode::Plain => base,
            BlockMode::Aggregated => base.groups(groups),
            BlockMode::Se => base.gate(GateSpec::Se {
                reduction: sae.reduction,
                placement: sae.placement,
            }),
            BlockMode::Sae => base.gate(GateSpec::Sae(sae)),
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn gate(mut self, gate: GateSpec) -> Self {
        self.gate = gate;
        self
    }

    pub fn needs_projection(&self) -> bool {
        !self.identity_shortcut && (self.stride != 1 || self.in_channels != self.out_channels)
    }

    /// Channel width the gate operates on.
    pub fn gate_width(&self) -> Option<usize> {
        self.gate.placement().map(|p| match p {
            GatePlacement::OnBranchOutput => self.out_channels,
            GatePlacement::OnBranchInput => self.in_channels,
        })
    }

    pub fn conv_specs(&self) -> [ConvSpec; 3] {
        [
            ConvSpec::new(self.in_channels, self.mid_channels, 1),
            ConvSpec::new(self.mid_channels, self.mid_channels, 3)
                .stride(self.stride)
                .padding(1)
                .groups(self.groups),
            ConvSpec::new(self.mid_channels, self.out_channels, 1),
        ]
    }

    pub fn shortcut_spec(&self) -> ConvSpec {
        ConvSpec::new(self.in_channels, self.out_channels, 1).stride(self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    pub spec: BlockSpec,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv3: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    pub gate: Option<Gate<T>>,
    pub shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

impl<T: Scalar> Bottleneck<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: BlockSpec, rng: &mut R) -> Result<Self> {
        if spec.stride == 0 {
            return Err(Error::Config(format!("{name}: stride must be positive")));
        }
        let [s1, s2, s3] = spec.conv_specs();
        let conv1 = Conv2d::new(&format!("{name}.conv1"), s1, false, rng)?;
        let bn1 = BatchNorm2d::new(&format!("{name}.bn1"), spec.mid_channels);
        let conv2 = Conv2d::new(&format!("{name}.conv2"), s2, false, rng)?;
        let bn2 = BatchNorm2d::new(&format!("{name}.bn2"), spec.mid_channels);
        let conv3 = Conv2d::new(&format!("{name}.conv3"), s3, false, rng)?;
        let bn3 = BatchNorm2d::new(&format!("{name}.bn3"), spec.out_channels);
        let width = spec.gate_width().unwrap_or(0);
        let gate = match spec.gate {
            GateSpec::None => None,
            GateSpec::Se { reduction, .. } => Some(Gate::Se(SeGate::new(&format!("{name}.se"), width, reduction, rng)?)),
            GateSpec::Sae(cfg) => Some(Gate::Sae(SaeGate::new(&format!("{name}.sae"), width, cfg, rng)?)),
        };
        let shortcut = if spec.needs_projection() {
            Some((
                Conv2d::new(&format!("{name}.shortcut.conv"), spec.shortcut_spec(), false, rng)?,
                BatchNorm2d::new(&format!("{name}.shortcut.bn"), spec.out_channels),
            ))
        } else {
            None
        };
        Ok(Self {
            spec,
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            gate,
            shortcut,
        })
    }

    fn placement(&self) -> Option<GatePlacement> {
        self.spec.gate.placement()
    }

    /// Everything except the gate and the skip: the `F` in `x + F(x)`.
    pub fn residual_branch(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(tape, x, mode)?;
        let h = self.bn1.forward(tape, h, mode)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, h, mode)?;
        let h = self.bn2.forward(tape, h, mode)?;
        let h = tape.relu(h);
        let h = self.conv3.forward(tape, h, mode)?;
        self.bn3.forward(tape, h, mode)
    }

    fn layers(&self) -> Vec<&dyn Module<T>> {
        let mut v: Vec<&dyn Module<T>> = vec![&self.conv1, &self.bn1, &self.conv2, &self.bn2, &self.conv3, &self.bn3];
        if let Some(g) = &self.gate {
            v.push(g);
        }
        if let Some((c, b)) = &self.shortcut {
            v.push(c);
            v.push(b);
        }
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut dyn Module<T>> {
        let mut v: Vec<&mut dyn Module<T>> = vec![
            &mut self.conv1,
            &mut self.bn1,
            &mut self.conv2,
            &mut self.bn2,
            &mut self.conv3,
            &mut self.bn3,
        ];
        if let Some(g) = &mut self.gate {
            v.push(g);
        }
        if let Some((c, b)) = &mut self.shortcut {
            v.push(c);
            v.push(b);
        }
        v
    }
}

impl<T: Scalar> Module<T> for Bottleneck<T> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let placement = self.placement();
        let branch_input = match (&mut self.gate, placement) {
            (Some(gate), Some(GatePlacement::OnBranchInput)) => {
                let g = gate.gates(tape, x)?;
                tape.channel_scale(x, g)?
            }
            _ => x,
        };
        let mut u = self.residual_branch(tape, branch_input, mode)?;
        if let (Some(gate), Some(GatePlacement::OnBranchOutput)) = (&mut self.gate, placement) {
            let g = gate.gates(tape, u)?;
            u = tape.channel_scale(u, g)?;
        }
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(tape, x, mode)?;
                bn.forward(tape, s, mode)?
            }
            None => x,
        };
        let (us, ss) = (tape.value(u).shape(), tape.value(skip).shape());
        if us != ss {
            return Err(Error::dim(
                "residual skip vs branch shape",
                format!("{ss:?}"),
                format!("{us:?}"),
            ));
        }
        let sum = tape.add(u, skip)?;
        Ok(tape.relu(sum))
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.layers().into_iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers_mut().into_iter().flat_map(|l| l.parameters_mut()).collect()
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers().into_iter().flat_map(|l| l.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers_mut().into_iter().flat_map(|l| l.buffers_mut()).collect()
    }
}
