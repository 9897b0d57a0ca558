//! Per-layer parameter accounting.

use crate::autograd::Module;
use crate::error::Result;
use crate::nn::{Bottleneck, GatePlacement, Linear};
use crate::tensor::{shape_string, Scalar};

use super::model::Model;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub out_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSummary {
    pub rows: Vec<SummaryRow>,
    pub total: usize,
}

impl ModelSummary {
    /// `layer,out_shape,params` with a closing `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,out_shape,params\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.name, shape_string(&r.out_shape), r.params));
        }
        s.push_str(&format!("total,,{}\n", self.total));
        s
    }
}

fn numel<T: Scalar>(m: &dyn Module<T>) -> usize {
    m.num_parameters()
}

struct Walker {
    rows: Vec<SummaryRow>,
}

impl Walker {
    fn row(&mut self, name: impl Into<String>, out_shape: Vec<usize>, params: usize) {
        self.rows.push(SummaryRow {
            name: name.into(),
            out_shape,
            params,
        });
    }

    fn gate_rows<T: Scalar>(&mut self, prefix: &str, block: &Bottleneck<T>, n: usize) {
        let Some(gate) = &block.gate else { return };
        let mut branch = 0;
        for (kind, layer) in gate.layers() {
            let name = match kind {
                "branch" => {
                    branch += 1;
                    format!("{prefix}.branch{}", branch - 1)
                }
                other => format!("{prefix}.{other}"),
            };
            self.linear_row(name, layer, n);
        }
    }

    fn linear_row<T: Scalar>(&mut self, name: String, layer: &Linear<T>, n: usize) {
        self.row(name, vec![n, layer.outputs()], numel(layer));
    }
}

/// Layer-by-layer output shapes and parameter counts for an `n x C x size x size` input.
pub fn summarize<T: Scalar>(model: &Model<T>, n: usize, size: usize) -> Result<ModelSummary> {
    let spec = &model.spec;
    let mut w = Walker { rows: Vec::new() };
    let conv = spec.stem.conv_spec();
    let (mut h, mut wd) = conv.output_hw(size, size)?;
    w.row("stem.conv", vec![n, conv.out_channels, h, wd], numel(&model.stem_conv));
    w.row("stem.bn", vec![n, conv.out_channels, h, wd], numel(&model.stem_bn));
    if let Some(pool) = spec.stem.max_pool {
        (h, wd) = pool.output_hw(h, wd)?;
        w.row("stem.pool", vec![n, conv.out_channels, h, wd], 0);
    }
    for (si, stage) in model.stages.iter().enumerate() {
        for (bi, block) in stage.iter().enumerate() {
            let prefix = format!("stage{}.block{bi}", si + 1);
            let bs = &block.spec;
            let gate_name = match block.gate {
                Some(crate::nn::Gate::Se(_)) => format!("{prefix}.se"),
                _ => format!("{prefix}.sae"),
            };
            if bs.gate.placement() == Some(GatePlacement::OnBranchInput) {
                w.gate_rows(&gate_name, block, n);
            }
            let [c1, c2, c3] = bs.conv_specs();
            let (h1, w1) = c1.output_hw(h, wd)?;
            w.row(format!("{prefix}.conv1"), vec![n, c1.out_channels, h1, w1], numel(&block.conv1));
            w.row(format!("{prefix}.bn1"), vec![n, c1.out_channels, h1, w1], numel(&block.bn1));
            let (h2, w2) = c2.output_hw(h1, w1)?;
            w.row(format!("{prefix}.conv2"), vec![n, c2.out_channels, h2, w2], numel(&block.conv2));
            w.row(format!("{prefix}.bn2"), vec![n, c2.out_channels, h2, w2], numel(&block.bn2));
            let (h3, w3) = c3.output_hw(h2, w2)?;
            w.row(format!("{prefix}.conv3"), vec![n, c3.out_channels, h3, w3], numel(&block.conv3));
            w.row(format!("{prefix}.bn3"), vec![n, c3.out_channels, h3, w3], numel(&block.bn3));
            if bs.gate.placement() == Some(GatePlacement::OnBranchOutput) {
                w.gate_rows(&gate_name, block, n);
            }
            if let Some((sc, sb)) = &block.shortcut {
                let (hs, ws) = sc.spec.output_hw(h, wd)?;
                w.row(format!("{prefix}.shortcut.conv"), vec![n, sc.spec.out_channels, hs, ws], numel(sc));
                w.row(format!("{prefix}.shortcut.bn"), vec![n, sc.spec.out_channels, hs, ws], numel(sb));
            }
            (h, wd) = (h3, w3);
        }
    }
    w.row("head.pool", vec![n, spec.final_channels()], 0);
    w.linear_row("head.fc".into(), &model.head, n);
    let total = model.num_parameters();
    Ok(ModelSummary { rows: w.rows, total })
}

/// Parameter summary at the architecture's nominal input size.
pub fn param_count<T: Scalar>(model: &Model<T>) -> Result<ModelSummary> {
    summarize(model, 1, model.spec.input_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Mode, Tape};
    use crate::tensor::Tensor;
    use crate::zoo::{build, preset};

    #[test]
    fn rows_sum_to_total() {
        for name in ["sae-resnet-tiny", "se-resnet-tiny", "resnext50-cifar"] {
            let m = build::<f32>(&preset(name).unwrap(), 0).unwrap();
            let s = param_count(&m).unwrap();
            assert_eq!(s.rows.iter().map(|r| r.params).sum::<usize>(), s.total, "{name}");
        }
    }

    #[test]
    fn shapes_match_forward() {
        let mut m = build::<f32>(&preset("sae-resnet-tiny").unwrap(), 0).unwrap();
        let s = summarize(&m, 2, 16).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2, 3, 16, 16]));
        let f = m.forward_features(&mut tape, x, Mode::Train).unwrap();
        let last_block = s.rows.iter().rev().find(|r| r.name.ends_with("bn3")).unwrap();
        assert_eq!(tape.value(*f.stages.last().unwrap()).shape(), last_block.out_shape.as_slice());
        assert_eq!(s.rows.last().unwrap().out_shape, vec![2, 8]);
    }
}
