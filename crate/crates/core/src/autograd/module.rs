use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

use super::param::Parameter;
use super::tape::{Gradients, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable component with named parameters.
pub trait Module<T: Scalar> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var>;

    fn parameters(&self) -> Vec<&Parameter<T>>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>>;

    /// Non-trainable state (batch norm running statistics), by name.
    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        Vec::new()
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn accumulate_grads(&mut self, grads: &Gradients<T>) -> Result<()> {
        for p in self.parameters_mut() {
            grads.accumulate_into(p)?;
        }
        Ok(())
    }
}
