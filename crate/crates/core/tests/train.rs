use std::fs;

use proptest::prelude::*;
use saenet::data::{synthetic_dataset, Dataset, Preproc, Split, SyntheticSpec};
use saenet::train::{
    evaluate, load_checkpoint, lr_at_epoch, read_manifest, save_checkpoint, sgd_step, topk_from_logits, train,
    TrainConfig, TrainOptions, METRICS_HEADER,
};
use saenet::zoo::{build, preset, Model};
use saenet::{Error, Module, Parameter, Tensor};

fn param(name: &str, v: &[f64], g: &[f64]) -> Parameter<f64> {
    let mut p = Parameter::new(name, Tensor::from_f64(&[v.len()], v).unwrap());
    p.grad = Tensor::from_f64(&[g.len()], g).unwrap();
    p
}

fn tiny_data() -> Dataset {
    synthetic_dataset(
        &SyntheticSpec {
            classes: 8,
            per_class: 4,
            dims: (3, 16, 16),
            ..Default::default()
        },
        Split::Train,
    )
    .unwrap()
}

fn tiny_model(seed: u64) -> Model<f32> {
    build::<f32>(&preset("sae-resnet-tiny").unwrap(), seed).unwrap()
}

fn snapshot(m: &Model<f32>) -> Vec<Vec<f32>> {
    m.parameters().iter().map(|p| p.value.data().to_vec()).collect()
}

fn short_run(lr0: f64) -> TrainConfig {
    TrainConfig {
        lr0,
        epochs: 2,
        batch_size: 16,
        ..Default::default()
    }
}

#[test]
fn step_schedule_values_are_exact() {
    let cfg = TrainConfig::default();
    for (epoch, lr) in [(0, 0.01), (14, 0.01), (15, 0.001), (29, 0.001), (30, 0.0001), (45, 1e-5), (49, 1e-5)] {
        assert_eq!(lr_at_epoch(&cfg, epoch).unwrap(), lr, "epoch {epoch}");
    }
    assert!(matches!(lr_at_epoch(&cfg, 50), Err(Error::Contract(_))));
}

#[test]
fn plain_sgd_moves_against_the_gradient() {
    let mut p = param("w", &[1.0, -2.0, 0.5], &[0.5, -0.25, 0.0]);
    sgd_step([&mut p], 0.1, 0.0, 0.0).unwrap();
    assert_eq!(p.value.data(), [1.0 - 0.05, -2.0 + 0.025, 0.5]);
}

#[test]
fn zero_gradient_without_decay_is_a_fixed_point() {
    let mut p = param("w", &[0.3, -0.7], &[0.0, 0.0]);
    for _ in 0..5 {
        sgd_step([&mut p], 0.1, 0.9, 0.0).unwrap();
    }
    assert_eq!(p.value.data(), [0.3, -0.7]);
}

#[test]
fn momentum_accumulates_over_two_steps() {
    let (lr, g) = (0.05, 1.5);
    let mut p = param("w", &[2.0], &[g]);
    sgd_step([&mut p], lr, 0.9, 0.0).unwrap();
    sgd_step([&mut p], lr, 0.9, 0.0).unwrap();
    // Total displacement lr*g + lr*(0.9g + g).
    let moved = 2.0 - p.value.data()[0];
    assert!((moved - lr * g * (1.0 + 1.9)).abs() < 1e-14);
}

#[test]
fn non_finite_gradient_is_named_and_nothing_moves() {
    let mut a = param("stem.conv.weight", &[1.0], &[0.5]);
    let mut b = param("stage2.block0.gate.excite.weight", &[1.0], &[f64::INFINITY]);
    match sgd_step([&mut a, &mut b], 0.1, 0.9, 1e-4) {
        Err(Error::Numerical { context, .. }) => assert_eq!(context, "stage2.block0.gate.excite.weight"),
        other => panic!("expected a numerical error, got {other:?}"),
    }
    assert_eq!((a.value.data()[0], b.value.data()[0]), (1.0, 1.0));
}

#[test]
fn one_hot_logits_score_perfectly() {
    let (n, k) = (6, 10);
    let labels: Vec<usize> = (0..n).map(|i| (i * 3) % k).collect();
    let mut v = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        v[i * k + y] = 1.0;
    }
    let m = topk_from_logits(&Tensor::<f64>::from_f64(&[n, k], &v).unwrap(), &labels).unwrap();
    assert_eq!((m.top1, m.top5), (1.0, 1.0));
}

#[test]
fn third_ranked_label_is_top5_but_not_top1() {
    let row = [0.1, 0.9, 0.3, 0.7, 0.0, 0.2];
    let m = topk_from_logits(&Tensor::<f64>::from_f64(&[1, 6], &row).unwrap(), &[2]).unwrap();
    assert_eq!((m.top1, m.top5), (0.0, 1.0));
    let m = topk_from_logits(&Tensor::<f64>::from_f64(&[1, 6], &row).unwrap(), &[4]).unwrap();
    assert_eq!(m.top5, 0.0);
}

#[test]
fn nan_logits_are_rejected() {
    let t = Tensor::<f64>::from_f64(&[1, 3], &[0.0, f64::NAN, 1.0]).unwrap();
    assert!(matches!(topk_from_logits(&t, &[0]), Err(Error::Numerical { .. })));
}

#[test]
fn evaluating_an_empty_set_is_a_contract_error() {
    let empty = Dataset::new(vec![], vec![], (3, 16, 16), 8, Split::Test).unwrap();
    let mut model = tiny_model(0);
    assert!(matches!(
        evaluate(&mut model, &empty, &Preproc::plain(3), 4, 0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn zero_learning_rate_without_decay_changes_no_weights() {
    let data = tiny_data();
    let mut model = tiny_model(0);
    let before = snapshot(&model);
    let cfg = TrainConfig {
        weight_decay: 0.0,
        epochs: 1,
        ..short_run(0.0)
    };
    let log = train(&mut model, &data, &data, &cfg, &TrainOptions::new(Preproc::plain(3))).unwrap();
    assert_eq!(log.steps, 2);
    assert_eq!(before, snapshot(&model));
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let data = tiny_data();
    let run = |prefetch| {
        let mut model = tiny_model(3);
        let mut opts = TrainOptions::new(Preproc::cifar100());
        opts.prefetch = prefetch;
        let log = train(&mut model, &data, &data, &short_run(0.05), &opts).unwrap();
        (log.metrics_csv(), snapshot(&model))
    };
    let (a, b) = (run(2), run(0));
    assert_eq!(a, b);
}

#[test]
fn run_directory_holds_metrics_and_best_checkpoint() {
    let data = tiny_data();
    let dir = tempfile::tempdir().unwrap();
    let mut model = tiny_model(1);
    let mut opts = TrainOptions::new(Preproc::plain(3));
    opts.out_dir = Some(dir.path().to_path_buf());
    let log = train(&mut model, &data, &data, &short_run(0.05), &opts).unwrap();

    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + log.epochs.len());
    assert!(lines[1].starts_with("0,0.05,"));

    let manifest = read_manifest(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.len(), model.parameters().len() + model.buffers().len());
    let floats: usize = manifest.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    assert_eq!(fs::metadata(dir.path().join("best.ckpt")).unwrap().len(), 4 * floats as u64);
}

#[test]
fn checkpoint_round_trip_restores_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut source = tiny_model(5);
    let data = tiny_data();
    train(&mut source, &data, &data, &short_run(0.05), &TrainOptions::new(Preproc::plain(3))).unwrap();
    save_checkpoint(&source, dir.path()).unwrap();

    let mut restored = tiny_model(6);
    assert_ne!(snapshot(&source), snapshot(&restored));
    load_checkpoint(&mut restored, dir.path()).unwrap();
    assert_eq!(snapshot(&source), snapshot(&restored));
    let images = Tensor::<f32>::from_f64(&[2, 3, 16, 16], &vec![0.25; 2 * 3 * 256]).unwrap();
    assert_eq!(source.predict(&images).unwrap(), restored.predict(&images).unwrap());

    let mut other = build::<f32>(&preset("resnet-tiny").unwrap(), 0).unwrap();
    assert!(load_checkpoint(&mut other, dir.path()).is_err());
}

#[test]
fn invalid_recipes_are_config_errors() {
    let data = tiny_data();
    let mut model = tiny_model(0);
    for cfg in [
        TrainConfig { batch_size: 0, ..short_run(0.05) },
        TrainConfig { momentum: 1.0, ..short_run(0.05) },
        short_run(-1.0),
    ] {
        let r = train(&mut model, &data, &data, &cfg, &TrainOptions::new(Preproc::plain(3)));
        assert!(matches!(r, Err(Error::Config(_))), "{cfg:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_never_increases(
        lr0 in 1e-6f64..1.0,
        step in 1usize..20,
        decay in 0.01f64..=1.0,
        epochs in 2usize..80,
    ) {
        let cfg = TrainConfig { lr0, step_epochs: step, decay, epochs, ..Default::default() };
        for e in 1..epochs {
            prop_assert!(lr_at_epoch(&cfg, e).unwrap() <= lr_at_epoch(&cfg, e - 1).unwrap());
        }
    }

    #[test]
    fn decay_alone_shrinks_weights(
        v in prop::collection::vec(-10.0f64..10.0, 1..16),
        lr in 1e-4f64..0.5,
        wd in 1e-5f64..1e-2,
    ) {
        prop_assume!(v.iter().any(|&x| x != 0.0));
        let mut p = param("w", &v, &vec![0.0; v.len()]);
        let norm = |p: &Parameter<f64>| p.value.data().iter().map(|x| x * x).sum::<f64>();
        let before = norm(&p);
        sgd_step([&mut p], lr, 0.0, wd).unwrap();
        prop_assert!(norm(&p) < before);
    }

    #[test]
    fn top1_never_exceeds_top5(
        logits in prop::collection::vec(-5.0f64..5.0, 4 * 12),
        labels in prop::collection::vec(0usize..12, 4),
    ) {
        let m = topk_from_logits(&Tensor::<f64>::from_f64(&[4, 12], &logits).unwrap(), &labels).unwrap();
        prop_assert!(0.0 <= m.top1 && m.top1 <= m.top5 && m.top5 <= 1.0);
        prop_assert!(m.mean_loss.is_finite() && m.mean_loss > 0.0);
    }
}
