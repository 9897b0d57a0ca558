//! Trains SaE-ResNet (CIFAR layout) on CIFAR-100 with the reference recipe.
//! Expects `train.bin` and `test.bin` in the given directory.
//!
//! ```text
//! cargo run --release --example cifar_train -- ./cifar-100-binary 5
//! ```

use std::path::PathBuf;

use saenet::data::{load_cifar100, Preproc};
use saenet::train::{train, TrainConfig, TrainOptions};
use saenet::zoo::{build, preset};

fn main() -> saenet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args_os().skip(1);
    let dir: PathBuf = args.next().map_or_else(|| "cifar-100-binary".into(), PathBuf::from);
    let epochs = args
        .next()
        .and_then(|s| s.to_str().and_then(|s| s.parse().ok()))
        .unwrap_or(50);

    let (train_set, test_set) = load_cifar100(&dir)?;
    let mut model = build::<f32>(&preset("sae-resnet-cifar")?, 0)?;
    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let mut opts = TrainOptions::new(Preproc::cifar100());
    opts.out_dir = Some("runs/cifar".into());
    let log = train(&mut model, &train_set, &test_set, &cfg, &opts)?;
    print!("{}", log.metrics_csv());
    Ok(())
}
