use rand::Rng;

use crate::autograd::{Mode, Module, Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::norm::{self, BnMode, RunningStats};
use crate::kernels::ConvSpec;
use crate::tensor::{Scalar, Tensor};

/// Kaiming (fan-in) normal initialization: `std = sqrt(2 / fan_in)`.
pub fn kaiming_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub spec: ConvSpec,
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: ConvSpec, bias: bool, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.weight_numel() / spec.out_channels;
        let weight = Parameter::new(format!("{name}.weight"), kaiming_normal(&spec.weight_shape(), fan_in, rng));
        let bias = bias.then(|| Parameter::new(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels])));
        Ok(Self { spec, weight, bias })
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, _mode: Mode) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        tape.conv2d(x, w, b, self.spec)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    name: String,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running: RunningStats<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running: RunningStats::new(channels),
            eps: norm::DEFAULT_EPS,
            momentum: norm::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(&self.gamma);
        let beta = tape.param(&self.beta);
        let bn_mode = match mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval,
        };
        tape.batchnorm2d(x, gamma, beta, &mut self.running, bn_mode, self.eps, self.momentum)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.running_mean", self.name), &self.running.mean),
            (format!("{}.running_var", self.name), &self.running.var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            (format!("{}.running_mean", self.name), &mut self.running.mean),
            (format!("{}.running_var", self.name), &mut self.running.var),
        ]
    }
}

/// Fully connected layer with an `in x out` weight.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, bias: bool, rng: &mut R) -> Self {
        let weight = Parameter::new(format!("{name}.weight"), kaiming_normal(&[inputs, outputs], inputs, rng));
        let bias = bias.then(|| Parameter::new(format!("{name}.bias"), Tensor::zeros(&[outputs])));
        Self { weight, bias }
    }

    /// Wraps explicit weights; `weight` is `in x out`.
    pub fn from_weights(name: &str, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let (_, outputs) = weight.dims2()?;
        if let Some(b) = &bias {
            if b.shape() != [outputs] {
                return Err(Error::Config(format!(
                    "{name}: bias shape {:?} does not match {outputs} outputs",
                    b.shape()
                )));
            }
        }
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: bias.map(|b| Parameter::new(format!("{name}.bias"), b)),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, _mode: Mode) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        tape.linear(x, w, b)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Applies its layers in order; with no layers it is the identity.
#[derive(Default)]
pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Module<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Module<T>>>) -> Self {
        Self { layers }
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        self.layers.iter_mut().try_fold(x, |h, layer| layer.forward(tape, h, mode))
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }
}
