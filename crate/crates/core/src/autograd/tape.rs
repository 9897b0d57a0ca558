//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever the
//! backward rule needs. Inputs always precede their consumers, so walking
//! the node list backwards is a reverse topological order and each node is
//! visited exactly once. A tape can be differentiated once; a second call to
//! [`Tape::backward`] is an error.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::{
    conv::{conv2d_backward, ConvSpec},
    elementwise::{self, channel_scale_backward, split_channels},
    linalg::{self, matmul_nt, matmul_tn, sum_rows},
    loss,
    norm::{self, BnMode, RunningStats},
    pool::{self, MaxPoolSpec},
};
use crate::tensor::{Scalar, Tensor};

use super::param::{ParamId, Parameter};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &str;

    /// Returns one optional gradient per input, in input order.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    GlobalAvgPool(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mode: BnMode,
    },
    Concat(Vec<Var>),
    ChannelScale {
        x: Var,
        gates: Var,
    },
    Add(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Sum(Var),
    Dot {
        x: Var,
        weights: Tensor<T>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat(parts) => parts.clone(),
            Op::ChannelScale { x, gates } => vec![*x, *gates],
            Op::Add(a, b) => vec![*a, *b],
            Op::GlobalAvgPool(x)
            | Op::MaxPool { x, .. }
            | Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::SoftmaxRows(x)
            | Op::Sum(x)
            | Op::Dot { x, .. }
            | Op::CrossEntropy { logits: x, .. } => vec![*x],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::MaxPool { .. } => "max_pool2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Concat(_) => "concat_channels",
            Op::ChannelScale { .. } => "channel_scale",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
            Op::Dot { .. } => "dot",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    differentiated: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("params", &self.params.len())
            .field("differentiated", &self.differentiated)
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            differentiated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a leaf whose gradient is wanted (e.g. a network input under test).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        let var = self.push(value, Op::Leaf);
        self.nodes[var.0].requires_grad = true;
        var
    }

    /// Registers a parameter; registering the same parameter twice returns
    /// the same variable so gradients from every use accumulate.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.push(p.value.clone(), Op::Param);
        self.params.insert(p.id(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = crate::kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }))
    }

    /// `x (N x in) * w (in x out) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = linalg::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.linear(a, b, None)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = pool::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvgPool(x)))
    }

    pub fn max_pool2d(&mut self, x: Var, spec: MaxPoolSpec) -> Result<Var> {
        let (out, argmax) = pool::max_pool2d(self.value(x), &spec)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BnMode,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let fwd = norm::batchnorm2d(self.value(x), self.value(gamma), self.value(beta), stats, mode, eps, momentum)?;
        Ok(self.push(
            fwd.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                mode,
            },
        ))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = elementwise::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn channel_scale(&mut self, x: Var, gates: Var) -> Result<Var> {
        let out = elementwise::channel_scale(self.value(x), self.value(gates))?;
        Ok(self.push(out, Op::ChannelScale { x, gates }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = elementwise::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = elementwise::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = elementwise::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = elementwise::softmax_rows(self.value(x))?;
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    /// Mean cross-entropy of `N x K` logits; a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = loss::cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Scalar `sum(x * weights)` against a constant tensor.
    pub fn dot(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let value = self.value(x).zip_map(&weights, |a, b| a * b)?.sum();
        Ok(self.push(Tensor::scalar(value), Op::Dot { x, weights }))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Smallest `|input|` over every relu on the tape, i.e. the distance of
    /// the current point from the nearest relu kink.
    pub fn min_relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.nodes[x.0].value.data().iter().fold(T::infinity(), |m, v| m.min(v.abs()))),
                _ => None,
            })
            .reduce(|a, b| a.min(b))
    }

    /// Propagates `d loss / d node` from a scalar `loss` back to every leaf.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.differentiated {
            return Err(Error::Contract(
                "backward was already run on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.node_backward(i, &g).map_err(|e| match e {
                Error::Dimension { .. } | Error::Contract(_) => Error::Contract(format!(
                    "backward rule of {} failed: {e}",
                    self.nodes[i].op.name()
                )),
                other => other,
            })?;
            for (target, delta) in contributions {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&delta)?,
                    slot @ None => *slot = Some(delta),
                }
            }
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v.0)).collect();
        Ok(Gradients { grads, params })
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, b, spec } => {
                let grads = conv2d_backward(val(*x), val(*w), g, spec, wants(*x))?;
                if let Some(dx) = grads.input {
                    out.push((*x, dx));
                }
                out.push((*w, grads.weight));
                if let Some(b) = b {
                    out.push((*b, grads.bias));
                }
            }
            Op::Linear { x, w, b } => {
                if wants(*x) {
                    out.push((*x, matmul_nt(g, val(*w))?));
                }
                if wants(*w) {
                    out.push((*w, matmul_tn(val(*x), g)?));
                }
                if let Some(b) = b {
                    out.push((*b, sum_rows(g)?));
                }
            }
            Op::GlobalAvgPool(x) => {
                out.push((*x, pool::global_avg_pool_backward(g, val(*x).shape())?));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, pool::max_pool2d_backward(g, argmax, val(*x).shape())?));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let grads = norm::batchnorm2d_backward(g, xhat, inv_std, val(*gamma), *mode)?;
                out.push((*x, grads.input));
                out.push((*gamma, grads.gamma));
                out.push((*beta, grads.beta));
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| val(p).shape()[1]).collect();
                for (p, piece) in parts.iter().zip(split_channels(g, &widths)?) {
                    out.push((*p, piece));
                }
            }
            Op::ChannelScale { x, gates } => {
                let (dx, dg) = channel_scale_backward(val(*x), val(*gates), g)?;
                out.push((*x, dx));
                out.push((*gates, dg));
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Scale(x, factor) => out.push((*x, g.map(|v| v * *factor))),
            Op::Relu(x) => {
                // Subgradient 0 at exactly 0.
                out.push((*x, val(*x).zip_map(g, |xv, gv| if xv > T::zero() { gv } else { T::zero() })?));
            }
            Op::Sigmoid(x) => {
                out.push((*x, node.value.zip_map(g, |y, gv| gv * y * (T::one() - y))?));
            }
            Op::SoftmaxRows(x) => {
                let (_, c) = node.value.dims2()?;
                let mut dx = Vec::with_capacity(g.numel());
                for (y, gr) in node.value.data().chunks(c).zip(g.data().chunks(c)) {
                    let inner: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(y.iter().zip(gr).map(|(&a, &b)| a * (b - inner)));
                }
                out.push((*x, Tensor::new(node.value.shape(), dx)?));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                out.push((*logits, loss::cross_entropy_backward(probs, labels, g.data()[0])?));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(val(*x).shape(), g.data()[0]))),
            Op::Dot { x, weights } => {
                let s = g.data()[0];
                out.push((*x, weights.map(|w| w * s)));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let grads = op.backward(&values, &node.value, g)?;
                if grads.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    )));
                }
                for (v, dv) in inputs.iter().zip(grads) {
                    if let Some(dv) = dv {
                        out.push((*v, dv));
                    }
                }
            }
        }
        for (v, t) in &out {
            if t.shape() != val(*v).shape() {
                return Err(Error::dim(
                    format!("gradient of {} input", node.op.name()),
                    format!("{:?}", val(*v).shape()),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        Ok(out)
    }
}

/// Result of [`Tape::backward`]: gradients of every leaf that required one.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, p: &Parameter<T>) -> Option<&Tensor<T>> {
        self.params.get(&p.id()).and_then(|&i| self.grads[i].as_ref())
    }

    /// Adds this parameter's gradient (if any) into `p.grad`.
    pub fn accumulate_into(&self, p: &mut Parameter<T>) -> Result<()> {
        if let Some(g) = self.param(p) {
            if !g.all_finite() {
                return Err(Error::Numerical {
                    context: p.name.clone(),
                    reason: "non-finite gradient".into(),
                });
            }
            p.grad.add_assign(g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_f64(&[2, 3], &[1., -2., 3., 0., 5., 6.]).unwrap());
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::ones(&[4]));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn second_backward_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::ones(&[2]));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn param_registered_once() {
        let p = Parameter::new("w", Tensor::<f64>::ones(&[3]));
        let mut tape = Tape::new();
        let a = tape.param(&p);
        let b = tape.param(&p);
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.param(&p).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_f64(&[3], &[-1., 0., 1.]).unwrap());
        let y = tape.relu(x);
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0., 0., 1.]);
        assert_eq!(tape.min_relu_margin(), Some(0.0));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::ones(&[2]));
        let x = tape.input(Tensor::ones(&[2]));
        let y = tape.add(c, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }
}
