//! Small named modules for gradient checking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{jitter_parameters, Mode, Module, Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::tensor::{Scalar, Tensor};

use super::block::{BlockMode, BlockSpec, Bottleneck};
use super::gate::{SaEConfig, SaeGate, SeGate};
use super::layers::{BatchNorm2d, Conv2d, Linear};

pub const GRAD_TARGETS: &[&str] = &[
    "conv",
    "grouped-conv",
    "bn",
    "fc",
    "gate-se",
    "gate-sae",
    "block-plain",
    "block-aggregated",
    "block-se",
    "block-sae",
    "net",
];

/// Standard deviation of the noise added to every parameter of a target.
pub const TARGET_JITTER: f64 = 0.1;

/// `conv -> bn -> relu -> strided conv -> relu -> global pool -> fc`.
#[derive(Debug, Clone)]
pub struct TinyNet<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub fc: Linear<T>,
}

impl<T: Scalar> TinyNet<T> {
    pub fn new<R: rand::Rng + ?Sized>(in_channels: usize, width: usize, classes: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new("conv1", ConvSpec::new(in_channels, width, 3).padding(1), false, rng)?,
            bn1: BatchNorm2d::new("bn1", width),
            conv2: Conv2d::new("conv2", ConvSpec::new(width, width, 3).stride(2).padding(1), true, rng)?,
            fc: Linear::new("fc", width, classes, true, rng),
        })
    }
}

impl<T: Scalar> Module<T> for TinyNet<T> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(tape, x, mode)?;
        let h = self.bn1.forward(tape, h, mode)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, h, mode)?;
        let h = tape.relu(h);
        let h = tape.global_avg_pool(h)?;
        self.fc.forward(tape, h, mode)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v = self.conv1.parameters();
        v.extend(self.bn1.parameters());
        v.extend(self.conv2.parameters());
        v.extend(self.fc.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.conv1.parameters_mut();
        v.extend(self.bn1.parameters_mut());
        v.extend(self.conv2.parameters_mut());
        v.extend(self.fc.parameters_mut());
        v
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.bn1.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.bn1.buffers_mut()
    }
}

/// A gradient-check target and the input shape it is checked on.
pub struct GradTarget<T> {
    pub module: Box<dyn Module<T>>,
    pub input_shape: Vec<usize>,
}

/// Builds target `name` (see [`GRAD_TARGETS`]) with jittered parameters.
///
/// Gates use `sae` (reduction, cardinality, merge); blocks are
/// `64 -> 32 -> 64` on `2 x 64 x 4 x 4` inputs and also honour the placement.
/// `net` produces logits and is meant for a cross-entropy check.
pub fn grad_target<T: Scalar>(name: &str, sae: SaEConfig, seed: u64) -> Result<GradTarget<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = |mode: BlockMode, rng: &mut ChaCha8Rng| -> Result<Box<dyn Module<T>>> {
        let spec = BlockSpec::for_mode(mode, 64, 32, 64, 32, sae);
        Ok(Box::new(Bottleneck::new("block", spec, rng)?))
    };
    let (mut module, input_shape): (Box<dyn Module<T>>, Vec<usize>) = match name {
        "conv" => (
            Box::new(Conv2d::new("conv", ConvSpec::new(3, 5, 3).stride(2).padding(1), true, &mut rng)?),
            vec![2, 3, 5, 5],
        ),
        "grouped-conv" => (
            Box::new(Conv2d::new("conv", ConvSpec::new(8, 12, 3).padding(1).groups(4), true, &mut rng)?),
            vec![2, 8, 4, 4],
        ),
        "bn" => (Box::new(BatchNorm2d::new("bn", 6)), vec![4, 6, 3, 3]),
        "fc" => (Box::new(Linear::new("fc", 10, 7, true, &mut rng)), vec![3, 10]),
        "gate-se" => (Box::new(SeGate::new("se", 64, sae.reduction, &mut rng)?), vec![1, 64, 4, 4]),
        "gate-sae" => (Box::new(SaeGate::new("sae", 64, sae, &mut rng)?), vec![1, 64, 4, 4]),
        "block-plain" => (block(BlockMode::Plain, &mut rng)?, vec![2, 64, 4, 4]),
        "block-aggregated" => (block(BlockMode::Aggregated, &mut rng)?, vec![2, 64, 4, 4]),
        "block-se" => (block(BlockMode::Se, &mut rng)?, vec![2, 64, 4, 4]),
        "block-sae" => (block(BlockMode::Sae, &mut rng)?, vec![2, 64, 4, 4]),
        "net" => (Box::new(TinyNet::new(3, 4, 5, &mut rng)?), vec![3, 3, 6, 6]),
        other => {
            return Err(Error::Config(format!(
                "unknown gradient-check target {other:?}; known targets: {}",
                GRAD_TARGETS.join(", ")
            )))
        }
    };
    jitter_parameters(module.as_mut(), TARGET_JITTER, seed ^ 0x6a17);
    Ok(GradTarget { module, input_shape })
}
