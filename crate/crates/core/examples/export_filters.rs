//! Trains the tiny SaE network briefly on synthetic data and writes its stem
//! filters as PGM images.
//!
//! ```text
//! cargo run --release --example export_filters -- /tmp/filters
//! ```

use std::path::PathBuf;

use saenet::data::{synthetic_dataset, Preproc, Split, SyntheticSpec};
use saenet::train::{train, TrainConfig, TrainOptions};
use saenet::zoo::{build, export_first_conv_filters, preset};

fn main() -> saenet::Result<()> {
    let out: PathBuf = std::env::args_os().nth(1).map_or_else(|| "filters".into(), PathBuf::from);
    let spec = SyntheticSpec {
        dims: (3, 16, 16),
        ..Default::default()
    };
    let train_set = synthetic_dataset(&spec, Split::Train)?;
    let mut model = build::<f32>(&preset("sae-resnet-tiny")?, 1)?;
    let cfg = TrainConfig {
        lr0: 0.05,
        epochs: 5,
        batch_size: 32,
        ..Default::default()
    };
    train(&mut model, &train_set, &train_set, &cfg, &TrainOptions::new(Preproc::plain(3)))?;
    for path in export_first_conv_filters(&model, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}
