use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Mode, Module, Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Bottleneck, Conv2d, Linear};
use crate::tensor::{Scalar, Tensor};

use super::arch::ArchSpec;

/// A built network: stem, residual stages and a linear classifier.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub spec: ArchSpec,
    pub stem_conv: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    pub stages: Vec<Vec<Bottleneck<T>>>,
    pub head: Linear<T>,
}

/// Outputs of a forward pass with the intermediate stage maps kept.
#[derive(Debug, Clone)]
pub struct Features {
    pub logits: Var,
    pub stem: Var,
    pub stages: Vec<Var>,
}

/// Builds `spec` with parameters drawn deterministically from `seed`.
pub fn build<T: Scalar>(spec: &ArchSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem_conv = Conv2d::new("stem.conv", spec.stem.conv_spec(), false, &mut rng)?;
    let stem_bn = BatchNorm2d::new("stem.bn", spec.stem.out_channels);
    let mut stages = Vec::with_capacity(spec.stages.len());
    for (si, stage) in spec.stages.iter().enumerate() {
        let blocks = stage
            .block_specs()
            .into_iter()
            .enumerate()
            .map(|(bi, bs)| Bottleneck::new(&format!("stage{}.block{bi}", si + 1), bs, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        stages.push(blocks);
    }
    let head = Linear::new("head.fc", spec.final_channels(), spec.num_classes, true, &mut rng);
    Ok(Model {
        spec: spec.clone(),
        stem_conv,
        stem_bn,
        stages,
        head,
    })
}

impl<T: Scalar> Model<T> {
    pub fn forward_features(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Features> {
        let (_, c, _, _) = tape.value(x).dims4()?;
        if c != self.spec.stem.in_channels {
            return Err(Error::dim("model input channel axis", self.spec.stem.in_channels, c));
        }
        let h = self.stem_conv.forward(tape, x, mode)?;
        let h = self.stem_bn.forward(tape, h, mode)?;
        let mut h = tape.relu(h);
        if let Some(pool) = self.spec.stem.max_pool {
            h = tape.max_pool2d(h, pool)?;
        }
        let stem = h;
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        for stage in &mut self.stages {
            for block in stage.iter_mut() {
                h = block.forward(tape, h, mode)?;
            }
            stage_outputs.push(h);
        }
        let pooled = tape.global_avg_pool(h)?;
        let logits = self.head.forward(tape, pooled, mode)?;
        Ok(Features {
            logits,
            stem,
            stages: stage_outputs,
        })
    }

    /// Logits for a batch in eval mode.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let logits = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(logits).clone())
    }

    fn layers(&self) -> Vec<&dyn Module<T>> {
        let mut v: Vec<&dyn Module<T>> = vec![&self.stem_conv, &self.stem_bn];
        for stage in &self.stages {
            v.extend(stage.iter().map(|b| b as &dyn Module<T>));
        }
        v.push(&self.head);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut dyn Module<T>> {
        let mut v: Vec<&mut dyn Module<T>> = vec![&mut self.stem_conv, &mut self.stem_bn];
        for stage in &mut self.stages {
            v.extend(stage.iter_mut().map(|b| b as &mut dyn Module<T>));
        }
        v.push(&mut self.head);
        v
    }
}

impl<T: Scalar> Module<T> for Model<T> {
    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_features(tape, x, mode)?.logits)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::preset;
    use std::collections::HashSet;

    #[test]
    fn deterministic_and_uniquely_named() {
        let spec = preset("sae-resnet-tiny").unwrap();
        let a = build::<f32>(&spec, 4).unwrap();
        let b = build::<f32>(&spec, 4).unwrap();
        let names: HashSet<_> = a.parameters().iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), a.parameters().len());
        for (p, q) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(p.value, q.value);
        }
        assert!(names.contains("stage2.block0.sae.branch3.weight"));
    }

    #[test]
    fn tiny_forward_shape() {
        let spec = preset("sae-resnet-tiny").unwrap();
        let mut m = build::<f32>(&spec, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = m.predict(&Tensor::randn(&[2, 3, 16, 16], 1.0, &mut rng)).unwrap();
        assert_eq!(logits.shape(), &[2, 8]);
        assert!(logits.all_finite());
    }
}
