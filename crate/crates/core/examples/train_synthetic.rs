//! Overfits the smallest SaE network on a seeded 8-class synthetic corpus.
//!
//! ```text
//! cargo run --release --example train_synthetic
//! ```

use saenet::autograd::Module;
use saenet::data::{synthetic_dataset, Preproc, Split, SyntheticSpec};
use saenet::train::{evaluate, train, TrainConfig, TrainOptions};
use saenet::zoo::{build, preset};

fn main() -> saenet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let spec = SyntheticSpec {
        classes: 8,
        per_class: 32,
        dims: (3, 16, 16),
        ..Default::default()
    };
    let train_set = synthetic_dataset(&spec, Split::Train)?;
    let val_set = synthetic_dataset(&spec, Split::Test)?;

    let arch = preset("sae-resnet-tiny")?;
    let mut model = build::<f32>(&arch, 0)?;
    println!("{} with {} parameters", arch.name, model.num_parameters());

    let cfg = TrainConfig {
        lr0: 0.05,
        epochs: 25,
        batch_size: 32,
        ..Default::default()
    };
    let mut opts = TrainOptions::new(Preproc::plain(3));
    opts.max_steps = Some(200);
    let started = std::time::Instant::now();
    let log = train(&mut model, &train_set, &val_set, &cfg, &opts)?;

    let fit = evaluate(&mut model, &train_set, &opts.preproc, 256, cfg.epochs)?;
    println!(
        "{} steps in {:.1?}: train top-1 {:.4}, val top-1 {:.4}",
        log.steps,
        started.elapsed(),
        fit.top1,
        log.epochs.last().map_or(0.0, |r| r.val.top1)
    );
    Ok(())
}
