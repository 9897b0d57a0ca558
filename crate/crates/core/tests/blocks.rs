mod common;

use common::{cross_entropy_direct, gap_loop, linear_loop, max_abs_diff, randn, rng, sigmoid, GateOracle};
use proptest::prelude::*;
use saenet::autograd::{grad_check, GradCheckConfig};
use saenet::kernels::{channel_scale, cross_entropy};
use saenet::nn::{
    BlockMode, BlockSpec, Bottleneck, GatePlacement, GateWeights, MergeMode, SaEConfig, SaeGate, SeGate,
};
use saenet::{Error, Mode, Module, Tape, Tensor};

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn sae(card: usize, merge: MergeMode) -> SaEConfig {
    SaEConfig {
        cardinality: card,
        merge,
        ..SaEConfig::default()
    }
}

fn gates_of(gate: &mut dyn FnMut(&mut Tape<f64>, saenet::Var) -> saenet::Result<saenet::Var>, u: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(u.clone());
    let g = gate(&mut tape, x).unwrap();
    tape.value(g).clone()
}

fn se_gates(gate: &mut SeGate<f64>, u: &Tensor<f64>) -> Tensor<f64> {
    gates_of(&mut |t, x| gate.gates(t, x), u)
}

fn sae_gates(gate: &mut SaeGate<f64>, u: &Tensor<f64>) -> Tensor<f64> {
    gates_of(&mut |t, x| gate.gates(t, x), u)
}

fn forward(block: &mut Bottleneck<f64>, x: &Tensor<f64>, mode: Mode) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = block.forward(&mut tape, xv, mode).unwrap();
    tape.value(y).clone()
}

/// Random `(weight, bias)` for an `i -> o` FC.
fn fc(i: usize, o: usize, seed: u64) -> (Tensor<f64>, Option<Tensor<f64>>) {
    let mut r = rng(seed);
    let w: Vec<f64> = randn(i * o, &mut r).iter().map(|v| v / (i as f64).sqrt()).collect();
    (t64(&[i, o], &w), Some(t64(&[o], &randn(o, &mut r))))
}

/// Copies every parameter of `from` whose name also exists in `to`.
fn copy_shared(from: &Bottleneck<f64>, to: &mut Bottleneck<f64>) -> usize {
    let mut copied = 0;
    for p in to.parameters_mut() {
        if let Some(src) = from.parameters().into_iter().find(|s| s.name == p.name) {
            p.value = src.value.clone();
            copied += 1;
        }
    }
    copied
}

#[test]
fn single_branch_concat_gate_is_se_gate() {
    let (w1, b1) = fc(64, 2, 1);
    let (w2, b2) = fc(2, 64, 2);
    let mut se = SeGate::from_weights("se", 32, (w1.clone(), b1.clone()), (w2.clone(), b2.clone())).unwrap();
    let mut sae_gate = SaeGate::from_weights(
        "sae",
        sae(1, MergeMode::Concat),
        GateWeights {
            branch_weights: vec![(w1, b1)],
            excite: (w2, b2),
        },
    )
    .unwrap();
    let mut r = rng(3);
    for _ in 0..10 {
        let u = t64(&[2, 64, 3, 3], &randn(2 * 64 * 9, &mut r));
        assert_eq!(se_gates(&mut se, &u).data(), sae_gates(&mut sae_gate, &u).data());
    }
}

#[test]
fn se_gate_matches_composition_oracle() {
    let (w1, b1) = fc(64, 2, 4);
    let (w2, b2) = fc(2, 64, 5);
    let mut se = SeGate::from_weights("se", 32, (w1.clone(), b1.clone()), (w2.clone(), b2.clone())).unwrap();
    let u = randn(64 * 9, &mut rng(6));
    let got = se_gates(&mut se, &t64(&[1, 64, 3, 3], &u));

    let z = gap_loop(&u, 1, 64, 3, 3);
    let s: Vec<f64> = linear_loop(&z, w1.data(), Some(b1.as_ref().unwrap().data()), 1, 64, 2)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let want: Vec<f64> = linear_loop(&s, w2.data(), Some(b2.as_ref().unwrap().data()), 1, 2, 64)
        .into_iter()
        .map(sigmoid)
        .collect();
    assert!(max_abs_diff(got.data(), &want) < 1e-12);
}

#[test]
fn se_gate_with_zero_excitation_is_one_half() {
    let (w1, b1) = fc(64, 2, 7);
    let mut se =
        SeGate::from_weights("se", 32, (w1, b1), (Tensor::zeros(&[2, 64]), Some(Tensor::zeros(&[64])))).unwrap();
    let u = t64(&[2, 64, 2, 2], &randn(512, &mut rng(8)));
    assert!(se_gates(&mut se, &u).data().iter().all(|&g| g == 0.5));
}

#[test]
fn sae_gate_matches_composition_oracle_in_both_merge_modes() {
    let (c, b) = (128, 4);
    for (merge, m) in [(MergeMode::Concat, 4 * b), (MergeMode::Sum, b)] {
        let branches: Vec<_> = (0..4).map(|i| fc(c, b, 10 + i)).collect();
        let excite = fc(m, c, 20);
        let mut gate = SaeGate::from_weights(
            "sae",
            sae(4, merge),
            GateWeights {
                branch_weights: branches.clone(),
                excite: excite.clone(),
            },
        )
        .unwrap();
        let u = randn(2 * c * 4, &mut rng(21));
        let got = sae_gates(&mut gate, &t64(&[2, c, 2, 2], &u));
        let oracle = GateOracle {
            branches: branches
                .iter()
                .map(|(w, bias)| (w.data(), bias.as_ref().unwrap().data()))
                .collect(),
            excite: (excite.0.data(), excite.1.as_ref().unwrap().data()),
            sum_merge: merge == MergeMode::Sum,
        };
        assert!(max_abs_diff(got.data(), &oracle.gates(&u, 2, c, 2, 2)) < 1e-12, "{merge}");
    }
}

#[test]
fn identical_summed_branches_are_one_branch_times_four() {
    let (c, b) = (64, 2);
    let branch = fc(c, b, 30);
    let excite = fc(b, c, 31);
    let mut gate = SaeGate::from_weights(
        "sae",
        sae(4, MergeMode::Sum),
        GateWeights {
            branch_weights: vec![branch.clone(); 4],
            excite: excite.clone(),
        },
    )
    .unwrap();
    let u = randn(c * 9, &mut rng(32));
    let got = sae_gates(&mut gate, &t64(&[1, c, 3, 3], &u));

    let z = gap_loop(&u, 1, c, 3, 3);
    let one: Vec<f64> = linear_loop(&z, branch.0.data(), Some(branch.1.as_ref().unwrap().data()), 1, c, b)
        .into_iter()
        .map(|v| 4.0 * v.max(0.0))
        .collect();
    let want: Vec<f64> = linear_loop(&one, excite.0.data(), Some(excite.1.as_ref().unwrap().data()), 1, b, c)
        .into_iter()
        .map(sigmoid)
        .collect();
    assert!(max_abs_diff(got.data(), &want) < 1e-12);
}

#[test]
fn first_stage_gate_dimensions() {
    let gate = SaeGate::<f64>::new("sae", 256, SaEConfig::default(), &mut rng(0)).unwrap();
    assert_eq!(gate.branches.len(), 4);
    for b in &gate.branches {
        assert_eq!((b.inputs(), b.outputs()), (256, 8));
    }
    assert_eq!((gate.excite.inputs(), gate.excite.outputs()), (32, 256));
}

#[test]
fn inconsistent_gate_weights_are_rejected() {
    let bad = SaeGate::from_weights(
        "sae",
        sae(2, MergeMode::Sum),
        GateWeights {
            branch_weights: vec![fc(64, 2, 0), fc(64, 2, 1)],
            excite: fc(4, 64, 2),
        },
    );
    assert!(matches!(bad, Err(Error::Config(_))));
    assert!(matches!(SeGate::<f64>::new("se", 48, 32, &mut rng(0)), Err(Error::Config(_))));
}

#[test]
fn merge_modes_give_same_gate_shape() {
    let u = t64(&[3, 64, 2, 2], &randn(768, &mut rng(40)));
    let mut shapes = Vec::new();
    for merge in [MergeMode::Concat, MergeMode::Sum] {
        let mut gate = SaeGate::new("sae", 64, sae(4, merge), &mut rng(41)).unwrap();
        shapes.push(sae_gates(&mut gate, &u).shape().to_vec());
    }
    assert_eq!(shapes, [vec![3, 64], vec![3, 64]]);
}

fn block(mode: BlockMode, cfg: SaEConfig, seed: u64) -> Bottleneck<f64> {
    Bottleneck::new("block", BlockSpec::for_mode(mode, 64, 32, 64, 32, cfg), &mut rng(seed)).unwrap()
}

const MODES: [BlockMode; 4] = [BlockMode::Plain, BlockMode::Aggregated, BlockMode::Se, BlockMode::Sae];

#[test]
fn dead_branch_block_is_relu_of_input() {
    let x = t64(&[2, 64, 4, 4], &randn(2048, &mut rng(50)));
    let relu_x: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
    for mode in MODES {
        let mut b = block(mode, SaEConfig::default(), 51);
        for conv in [&mut b.conv1, &mut b.conv2, &mut b.conv3] {
            conv.weight.value.fill(0.0);
        }
        b.bn3.gamma.value.fill(0.0);
        assert!(b.shortcut.is_none());
        for m in [Mode::Train, Mode::Eval] {
            assert_eq!(forward(&mut b, &x, m).data(), relu_x.as_slice(), "{mode}");
        }
    }
}

#[test]
fn aggregated_with_one_group_is_plain() {
    let x = t64(&[2, 64, 4, 4], &randn(2048, &mut rng(52)));
    let mut plain = block(BlockMode::Plain, SaEConfig::default(), 53);
    let spec = BlockSpec::for_mode(BlockMode::Aggregated, 64, 32, 64, 1, SaEConfig::default());
    let mut agg = Bottleneck::new("block", spec, &mut rng(54)).unwrap();
    assert_eq!(copy_shared(&plain, &mut agg), plain.parameters().len());
    assert_eq!(forward(&mut plain, &x, Mode::Train).data(), forward(&mut agg, &x, Mode::Train).data());
}

#[test]
fn saturated_gate_reproduces_ungated_block() {
    let x = t64(&[2, 64, 4, 4], &randn(2048, &mut rng(55)));
    for placement in [GatePlacement::OnBranchOutput, GatePlacement::OnBranchInput] {
        for merge in [MergeMode::Concat, MergeMode::Sum] {
            let cfg = SaEConfig {
                merge,
                placement,
                ..SaEConfig::default()
            };
            let mut plain = block(BlockMode::Plain, cfg, 56);
            let mut gated = block(BlockMode::Sae, cfg, 57);
            copy_shared(&plain, &mut gated);
            let Some(saenet::nn::Gate::Sae(g)) = &mut gated.gate else { panic!("no gate") };
            g.excite.bias.as_mut().unwrap().value.fill(40.0);
            let a = forward(&mut plain, &x, Mode::Train);
            let b = forward(&mut gated, &x, Mode::Train);
            let err = max_abs_diff(a.data(), b.data());
            assert!(err < 1e-6, "{placement}/{merge}: {err:e}");
        }
    }
}

#[test]
fn block_output_shape_equals_skip_shape() {
    let x = t64(&[2, 64, 6, 6], &randn(2 * 64 * 36, &mut rng(60)));
    for mode in MODES {
        for (out, stride) in [(64, 1), (128, 1), (128, 2)] {
            let spec = BlockSpec::for_mode(mode, 64, 32, out, 32, SaEConfig::default()).stride(stride);
            let mut b = Bottleneck::new("block", spec, &mut rng(61)).unwrap();
            assert_eq!(b.shortcut.is_some(), out != 64 || stride != 1);
            let y = forward(&mut b, &x, Mode::Train);
            let side = 6usize.div_ceil(stride);
            assert_eq!(y.shape(), [2, out, side, side], "{mode} {out} {stride}");
        }
    }
}

#[test]
fn identity_skip_with_channel_change_is_dimension_error() {
    let mut spec = BlockSpec::new(64, 32, 128);
    spec.identity_shortcut = true;
    let mut b = Bottleneck::<f64>::new("block", spec, &mut rng(0)).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(&[2, 64, 2, 2]));
    assert!(matches!(b.forward(&mut tape, x, Mode::Train), Err(Error::Dimension { .. })));
}

#[test]
fn projection_block_passes_gradient_check() {
    let spec = BlockSpec::for_mode(BlockMode::Sae, 64, 32, 128, 32, SaEConfig::default()).stride(2);
    let mut b = Bottleneck::<f64>::new("block", spec, &mut rng(62)).unwrap();
    saenet::autograd::jitter_parameters(&mut b, 0.1, 63);
    let report = grad_check(&mut b, &[2, 64, 4, 4], &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{}", report.to_csv());
}

#[test]
fn cross_entropy_examples() {
    let (loss, _) = cross_entropy(&Tensor::<f64>::full(&[3, 100], 0.7), &[0, 42, 99]).unwrap();
    assert!((loss - 100f64.ln()).abs() < 1e-12);
    assert!((loss - 4.60517).abs() < 1e-5);

    let mut confident = vec![0.0; 2 * 10];
    confident[3] = 40.0;
    confident[10 + 7] = 40.0;
    let (loss, _) = cross_entropy(&t64(&[2, 10], &confident), &[3, 7]).unwrap();
    assert!(loss < 1e-10);

    let mut r = rng(70);
    for _ in 0..20 {
        let logits = randn(40, &mut r);
        let labels: Vec<usize> = (0..4).map(|i| (i * 7 + 3) % 10).collect();
        let (loss, _) = cross_entropy(&t64(&[4, 10], &logits), &labels).unwrap();
        assert!((loss - cross_entropy_direct(&logits, &labels, 10)).abs() < 1e-10);
    }

    let (big, _) = cross_entropy(&t64(&[1, 2], &[1000.0, 0.0]), &[1]).unwrap();
    assert!((big - 1000.0).abs() < 1e-9);
    assert!(matches!(cross_entropy(&Tensor::<f64>::zeros(&[1, 3]), &[3]), Err(Error::Data(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gates_lie_strictly_inside_unit_interval(seed in any::<u64>(), scale in 0.01f64..5.0, sum in any::<bool>()) {
        let merge = if sum { MergeMode::Sum } else { MergeMode::Concat };
        let mut gate = SaeGate::new("sae", 64, sae(4, merge), &mut rng(seed)).unwrap();
        let mut se = SeGate::new("se", 64, 32, &mut rng(seed ^ 1)).unwrap();
        let u: Vec<f64> = randn(2 * 64 * 9, &mut rng(seed ^ 2)).iter().map(|v| v * scale).collect();
        let u = t64(&[2, 64, 3, 3], &u);
        for g in [sae_gates(&mut gate, &u), se_gates(&mut se, &u)] {
            prop_assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
            let scaled = channel_scale(&u, &g).unwrap();
            prop_assert!(scaled.data().iter().zip(u.data()).all(|(s, x)| s.abs() <= x.abs()));
        }
    }

    #[test]
    fn single_branch_sae_equals_se_for_any_input(seed in any::<u64>()) {
        let (w1, b1) = fc(64, 2, seed);
        let (w2, b2) = fc(2, 64, seed ^ 9);
        let mut se = SeGate::from_weights("se", 32, (w1.clone(), b1.clone()), (w2.clone(), b2.clone())).unwrap();
        let mut one = SaeGate::from_weights(
            "sae",
            sae(1, MergeMode::Concat),
            GateWeights { branch_weights: vec![(w1, b1)], excite: (w2, b2) },
        ).unwrap();
        let u = t64(&[1, 64, 2, 2], &randn(256, &mut rng(seed ^ 3)));
        let (a, b) = (se_gates(&mut se, &u), sae_gates(&mut one, &u));
        prop_assert_eq!(a.data(), b.data());
    }
}
