//! Checks every gradient-check target against central differences in f64,
//! including both SaE merge modes and both gate placements.
//!
//! ```text
//! cargo run --release --example grad_check
//! ```

use saenet::autograd::{grad_check, CheckLoss, GradCheckConfig};
use saenet::nn::{grad_target, GatePlacement, MergeMode, SaEConfig, GRAD_TARGETS};

fn main() -> saenet::Result<()> {
    let mut failures = 0;
    for &name in GRAD_TARGETS {
        let merges: &[MergeMode] = match name {
            "gate-sae" | "block-sae" => &[MergeMode::Concat, MergeMode::Sum],
            _ => &[MergeMode::Concat],
        };
        let placements: &[GatePlacement] = match name {
            "block-se" | "block-sae" => &[GatePlacement::OnBranchOutput, GatePlacement::OnBranchInput],
            _ => &[GatePlacement::OnBranchOutput],
        };
        let variants = merges.iter().flat_map(|&merge| {
            placements.iter().map(move |&placement| SaEConfig {
                merge,
                placement,
                ..SaEConfig::default()
            })
        });
        for cfg in variants {
            let mut target = grad_target::<f64>(name, cfg, 0)?;
            let mut check = GradCheckConfig::default();
            if name == "net" {
                check.loss = CheckLoss::CrossEntropy;
            }
            let report = grad_check(target.module.as_mut(), &target.input_shape, &check)?;
            let worst = report.worst().expect("targets have parameters");
            println!(
                "{:<5} {name:<17} merge={:<6} placement={:<6} worst {:<24} {:.2e}",
                if report.passed() { "ok" } else { "FAIL" },
                cfg.merge.to_string(),
                cfg.placement.to_string(),
                worst.name,
                worst.max_rel_error
            );
            failures += usize::from(!report.passed());
        }
    }
    println!("{failures} failures");
    Ok(())
}
