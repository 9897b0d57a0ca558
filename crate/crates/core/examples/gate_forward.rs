//! Runs an SE gate and an SaE gate on the same feature map and compares
//! their gates and parameter budgets.
//!
//! ```text
//! cargo run --release --example gate_forward
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saenet::autograd::{Module, Tape};
use saenet::nn::{se_gate_params, MergeMode, SaEConfig, SaeGate, SeGate};
use saenet::Tensor;

fn main() -> saenet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let width = 256;
    let x = Tensor::<f32>::randn(&[2, width, 8, 8], 1.0, &mut rng);

    let mut se = SeGate::<f32>::new("se", width, 32, &mut rng)?;
    for merge in [MergeMode::Concat, MergeMode::Sum] {
        let cfg = SaEConfig {
            merge,
            ..SaEConfig::default()
        };
        let mut sae = SaeGate::<f32>::new("sae", width, cfg, &mut rng)?;

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let gates = sae.gates(&mut tape, xv)?;
        let gated = tape.channel_scale(xv, gates)?;
        let g = tape.value(gates);
        let (lo, hi) = g.data().iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        println!(
            "sae/{merge}: gates {:?} in [{lo:.3}, {hi:.3}], output {:?}, {} params (closed form {})",
            g.shape(),
            tape.value(gated).shape(),
            sae.num_parameters(),
            cfg.gate_params(width)?
        );
    }

    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let gates = se.gates(&mut tape, xv)?;
    println!(
        "se: gates {:?}, {} params (closed form {})",
        tape.value(gates).shape(),
        se.num_parameters(),
        se_gate_params(width, 32)?
    );
    Ok(())
}
