//! Parameter budgets of the full-size presets and the per-stage breakdown of
//! SaE-ResNet-50.
//!
//! ```text
//! cargo run --release --example param_count
//! ```

use saenet::tensor::shape_string;
use saenet::zoo::{build, preset, summarize};

fn main() -> saenet::Result<()> {
    for name in ["resnet50", "se-resnet50", "sae-resnet50", "resnext50", "sae-resnext50"] {
        let arch = preset(name)?;
        let model = build::<f32>(&arch, 0)?;
        let summary = summarize(&model, 1, arch.input_size)?;
        println!("{name:<15} {:>12} parameters", summary.total);
    }

    let arch = preset("sae-resnet50")?;
    let model = build::<f32>(&arch, 0)?;
    let summary = summarize(&model, 1, 224)?;
    println!();
    let shown = summary
        .rows
        .iter()
        .filter(|r| r.name.starts_with("stage1.block0") || r.name.starts_with("stem") || r.name.starts_with("head"));
    for row in shown {
        println!("{:<24} {:>16} {:>10}", row.name, shape_string(&row.out_shape), row.params);
    }
    Ok(())
}
