//! Declarative architecture tables and the named presets.

use crate::error::{Error, Result};
use crate::kernels::{ConvSpec, MaxPoolSpec};
use crate::nn::{BlockMode, BlockSpec, GatePlacement, GateSpec, SaEConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct StemSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub max_pool: Option<MaxPoolSpec>,
}

impl StemSpec {
    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec::new(self.in_channels, self.out_channels, self.kernel)
            .stride(self.stride)
            .padding(self.kernel / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub in_channels: usize,
    pub bottleneck: usize,
    pub out_channels: usize,
    pub repeats: usize,
    /// Stride of the first block; the rest use stride 1.
    pub stride: usize,
    pub groups: usize,
    pub gate: GateSpec,
}

impl StageSpec {
    pub fn mode(&self) -> BlockMode {
        match (self.gate, self.groups) {
            (GateSpec::Sae(_), _) => BlockMode::Sae,
            (GateSpec::Se { .. }, _) => BlockMode::Se,
            (GateSpec::None, 1) => BlockMode::Plain,
            (GateSpec::None, _) => BlockMode::Aggregated,
        }
    }

    pub fn block_specs(&self) -> Vec<BlockSpec> {
        (0..self.repeats)
            .map(|i| {
                let (input, stride) = if i == 0 {
                    (self.in_channels, self.stride)
                } else {
                    (self.out_channels, 1)
                };
                BlockSpec::new(input, self.bottleneck, self.out_channels)
                    .stride(stride)
                    .groups(self.groups)
                    .gate(self.gate)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
    /// Nominal square input size the preset is laid out for.
    pub input_size: usize,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        self.stem.conv_spec().validate()?;
        if self.num_classes == 0 {
            return Err(Error::Config("classifier width must be positive".into()));
        }
        let mut channels = self.stem.out_channels;
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.in_channels != channels {
                return Err(Error::Config(format!(
                    "stage {} expects {} input channels but receives {channels}",
                    i + 1,
                    stage.in_channels
                )));
            }
            if stage.repeats == 0 || stage.stride == 0 {
                return Err(Error::Config(format!("stage {} needs positive repeats and stride", i + 1)));
            }
            for block in stage.block_specs() {
                for spec in block.conv_specs() {
                    spec.validate()?;
                }
                if let Some(width) = block.gate_width() {
                    match block.gate {
                        GateSpec::Se { reduction, .. } => {
                            crate::nn::se_gate_params(width, reduction)?;
                        }
                        GateSpec::Sae(cfg) => {
                            cfg.gate_params(width)?;
                        }
                        GateSpec::None => {}
                    }
                }
            }
            channels = stage.out_channels;
        }
        Ok(())
    }

    pub fn final_channels(&self) -> usize {
        self.stages.last().map_or(self.stem.out_channels, |s| s.out_channels)
    }

    /// Replaces the SaE configuration of every SaE stage.
    pub fn with_sae(mut self, cfg: SaEConfig) -> Self {
        for s in &mut self.stages {
            if let GateSpec::Sae(_) = s.gate {
                s.gate = GateSpec::Sae(cfg);
            }
        }
        self
    }

    /// Replaces the reduction and placement of every SE stage.
    pub fn with_se(mut self, reduction: usize, placement: GatePlacement) -> Self {
        for s in &mut self.stages {
            if let GateSpec::Se { .. } = s.gate {
                s.gate = GateSpec::Se { reduction, placement };
            }
        }
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    pub fn blocks(&self) -> usize {
        self.stages.iter().map(|s| s.repeats).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    ResNet,
    ResNeXt,
    SeResNet,
    SaeResNet,
    SaeResNeXt,
}

impl Family {
    fn gate(self) -> GateSpec {
        let cfg = SaEConfig::default();
        match self {
            Family::ResNet | Family::ResNeXt => GateSpec::None,
            Family::SeResNet => GateSpec::Se {
                reduction: cfg.reduction,
                placement: cfg.placement,
            },
            Family::SaeResNet | Family::SaeResNeXt => GateSpec::Sae(cfg),
        }
    }

    fn aggregated(self) -> bool {
        matches!(self, Family::ResNeXt | Family::SaeResNeXt)
    }
}

/// Named architectures accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "resnet50",
    "resnext50",
    "se-resnet50",
    "sae-resnet50",
    "sae-resnext50",
    "resnet50-cifar",
    "resnext50-cifar",
    "se-resnet50-cifar",
    "sae-resnet50-cifar",
    "sae-resnext50-cifar",
    "resnet-tiny",
    "se-resnet-tiny",
    "sae-resnet-tiny",
];

const CARDINALITY_GROUPS: usize = 32;

fn stages(
    family: Family,
    stem_out: usize,
    mids: &[usize],
    outs: &[usize],
    repeats: &[usize],
) -> Vec<StageSpec> {
    let mut input = stem_out;
    mids.iter()
        .zip(outs)
        .zip(repeats)
        .enumerate()
        .map(|(i, ((&mid, &out), &rep))| {
            let stage = StageSpec {
                in_channels: input,
                bottleneck: if family.aggregated() { mid * 2 } else { mid },
                out_channels: out,
                repeats: rep,
                stride: if i == 0 { 1 } else { 2 },
                groups: if family.aggregated() { CARDINALITY_GROUPS } else { 1 },
                gate: family.gate(),
            };
            input = out;
            stage
        })
        .collect()
}

/// Builds a named architecture. `*-resnet-cifar` is accepted as shorthand
/// for `*-resnet50-cifar`.
pub fn preset(name: &str) -> Result<ArchSpec> {
    let canonical = name.replace("resnet-cifar", "resnet50-cifar").replace("resnext-cifar", "resnext50-cifar");
    let (family_name, scale) = if let Some(f) = canonical.strip_suffix("50-cifar") {
        (f, "cifar")
    } else if let Some(f) = canonical.strip_suffix("-tiny") {
        (f, "tiny")
    } else if let Some(f) = canonical.strip_suffix("50") {
        (f, "imagenet")
    } else {
        ("", "")
    };
    let family = match family_name {
        "resnet" => Family::ResNet,
        "resnext" => Family::ResNeXt,
        "se-resnet" => Family::SeResNet,
        "sae-resnet" => Family::SaeResNet,
        "sae-resnext" => Family::SaeResNeXt,
        _ => {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    let spec = match scale {
        "imagenet" => ArchSpec {
            name: canonical.clone(),
            stem: StemSpec {
                in_channels: 3,
                out_channels: 64,
                kernel: 7,
                stride: 2,
                max_pool: Some(MaxPoolSpec {
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                }),
            },
            stages: stages(family, 64, &[64, 128, 256, 512], &[256, 512, 1024, 2048], &[3, 4, 6, 3]),
            num_classes: 1000,
            input_size: 224,
        },
        "cifar" => ArchSpec {
            name: canonical.clone(),
            stem: StemSpec {
                in_channels: 3,
                out_channels: 16,
                kernel: 3,
                stride: 1,
                max_pool: None,
            },
            stages: stages(family, 16, &[16, 32, 64, 128], &[64, 128, 256, 512], &[2, 2, 2, 2]),
            num_classes: 100,
            input_size: 32,
        },
        "tiny" if !family.aggregated() => ArchSpec {
            name: canonical.clone(),
            stem: StemSpec {
                in_channels: 3,
                out_channels: 16,
                kernel: 3,
                stride: 1,
                max_pool: None,
            },
            stages: stages(family, 16, &[8, 16], &[32, 64], &[1, 1]),
            num_classes: 8,
            input_size: 16,
        },
        _ => {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in PRESETS {
            let spec = preset(name).unwrap();
            assert_eq!(&spec.name, name);
        }
        assert_eq!(preset("sae-resnet-cifar").unwrap().name, "sae-resnet50-cifar");
        assert!(preset("vgg16").is_err());
        assert!(preset("sae-resnext-tiny").is_err());
    }

    #[test]
    fn resnet50_stage_layout() {
        let spec = preset("sae-resnet50").unwrap();
        let repeats: Vec<_> = spec.stages.iter().map(|s| s.repeats).collect();
        let outs: Vec<_> = spec.stages.iter().map(|s| s.out_channels).collect();
        assert_eq!(repeats, [3, 4, 6, 3]);
        assert_eq!(outs, [256, 512, 1024, 2048]);
        assert_eq!(spec.blocks(), 16);
        let x = preset("sae-resnext50").unwrap();
        let mids: Vec<_> = x.stages.iter().map(|s| s.bottleneck).collect();
        assert_eq!(mids, [128, 256, 512, 1024]);
        assert!(x.stages.iter().all(|s| s.groups == 32 && s.mode() == BlockMode::Sae));
    }

    #[test]
    fn chain_mismatch_is_config_error() {
        let mut spec = preset("resnet-tiny").unwrap();
        spec.stages[1].in_channels = 48;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
