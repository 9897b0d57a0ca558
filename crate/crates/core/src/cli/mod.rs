//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid arguments, configuration or input data,
//! 2 numerical failure at run time (including a failed gradient check).

pub mod args;

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::error::ErrorKind;
use clap::Parser;

use crate::autograd::{grad_check, CheckLoss, GradCheckConfig};
use crate::data::{
    load_pgm_folder, load_record_dir, synthetic_dataset, write_corpus, Dataset, Preproc, Split, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::nn::grad_target;
use crate::tensor::{DType, Scalar};
use crate::train::{evaluate, load_checkpoint, train, TrainOptions};
use crate::zoo::{build, export_first_conv_filters, preset, summarize, ArchSpec};

pub use args::Cli;
use args::{Command, EvalArgs, ExportArgs, GateArgs, GradcheckArgs, ParamsArgs, SyntheticArgs, TrainArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical { .. } | Error::DegenerateBatch(_) | Error::Contract(_) => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

/// Parses `argv` (program name first) and runs the command on the process's
/// standard streams.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_INVALID
                }
            }
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output stream>", e)
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Train(a) => match a.optim.dtype {
            DType::F32 => cmd_train::<f32>(&a, out),
            DType::F64 => cmd_train::<f64>(&a, out),
        },
        Command::Eval(a) => match a.dtype {
            DType::F32 => cmd_eval::<f32>(&a, out),
            DType::F64 => cmd_eval::<f64>(&a, out),
        },
        Command::Gradcheck(a) => match a.dtype {
            DType::F32 => cmd_gradcheck::<f32>(&a, out, err),
            DType::F64 => cmd_gradcheck::<f64>(&a, out, err),
        },
        Command::Params(a) => cmd_params(&a, out),
        Command::ExportFilters(a) => cmd_export(&a, out),
        Command::MakeSynthetic(a) => cmd_make_synthetic(&a, out),
    }
}

/// The preset with the gate flags applied to every gated stage.
pub fn configured_preset(name: &str, gate: &GateArgs) -> Result<ArchSpec> {
    let arch = preset(name)?
        .with_sae(gate.sae())
        .with_se(gate.reduction, gate.gate_placement);
    arch.validate()?;
    Ok(arch)
}

/// Loads a PGM folder (when `labels.csv` exists; it serves as both splits)
/// or a record directory. Single-channel images are replicated to RGB.
pub fn load_data(dir: &Path) -> Result<(Dataset, Dataset)> {
    let (train, test) = if dir.join(crate::data::folder::LABELS_FILE).exists() {
        let ds = load_pgm_folder(dir, Split::Train)?;
        let mut test = ds.clone();
        test.split = Split::Test;
        (ds, test)
    } else {
        load_record_dir(dir)?
    };
    let rgb = |ds: Dataset| if ds.channels == 1 { ds.replicate_channels(3) } else { Ok(ds) };
    Ok((rgb(train)?, rgb(test)?))
}

fn preproc_for(resize_224: bool, augment: bool) -> Preproc {
    let mut p = Preproc::cifar100();
    if !augment {
        p = p.without_augmentation();
    }
    if resize_224 {
        p = p.with_target_size(224);
    }
    p
}

fn arch_for_data(name: &str, gate: &GateArgs, ds: &Dataset, resize_224: bool) -> Result<ArchSpec> {
    let size = if resize_224 { 224 } else { ds.height };
    let arch = configured_preset(name, gate)?
        .with_classes(ds.num_classes)
        .with_input_size(size);
    if arch.stem.in_channels != ds.channels {
        return Err(Error::Data(format!(
            "{} expects {}-channel images, data has {}",
            arch.name, arch.stem.in_channels, ds.channels
        )));
    }
    Ok(arch)
}

fn cmd_train<T: Scalar>(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.optim.config();
    cfg.validate()?;
    configured_preset(&a.preset, &a.gate)?;
    let (train_set, val_set) = load_data(&a.data)?;
    let arch = arch_for_data(&a.preset, &a.gate, &train_set, a.resize_224)?;
    let mut model = build::<T>(&arch, cfg.seed)?;
    let mut opts = TrainOptions::new(preproc_for(a.resize_224, !a.no_augment));
    opts.out_dir = Some(a.out.clone());
    opts.max_steps = a.max_steps;
    opts.eval_batch_size = cfg.batch_size;
    let log = train(&mut model, &train_set, &val_set, &cfg, &opts)?;
    write!(out, "{}", log.metrics_csv()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_eval<T: Scalar>(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    configured_preset(&a.preset, &a.gate)?;
    let (train_set, test_set) = load_data(&a.data)?;
    let arch = arch_for_data(&a.preset, &a.gate, &train_set, a.resize_224)?;
    let mut model = build::<T>(&arch, 0)?;
    load_checkpoint(&mut model, &a.checkpoint)?;
    let m = evaluate(&mut model, &test_set, &preproc_for(a.resize_224, false), a.batch_size, 0)?;
    writeln!(out, "split,samples,top1,top5,loss").map_err(io_err)?;
    writeln!(out, "test,{},{:.6},{:.6},{:.6}", test_set.len(), m.top1, m.top5, m.mean_loss).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck<T: Scalar>(a: &GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut target = grad_target::<T>(&a.preset, a.gate.sae(), a.seed)?;
    let mut cfg = GradCheckConfig::for_dtype(T::DTYPE);
    if let Some(tol) = a.tol {
        if !(tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
        }
        cfg.tolerance = tol;
    }
    cfg.seed = a.seed;
    if a.preset == "net" {
        cfg.loss = CheckLoss::CrossEntropy;
    }
    let report = grad_check(target.module.as_mut(), &target.input_shape, &cfg)?;
    write!(out, "{}", report.to_csv()).map_err(io_err)?;
    let worst = report.worst().map_or(0.0, |w| w.max_rel_error);
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    writeln!(
        err,
        "{verdict} {} ({}): max relative error {worst:.3e}, tolerance {:.1e}",
        a.preset,
        T::DTYPE,
        cfg.tolerance
    )
    .map_err(io_err)?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_NUMERICAL })
}

fn cmd_params(a: &ParamsArgs, out: &mut dyn Write) -> Result<i32> {
    let mut arch = configured_preset(&a.preset, &a.gate)?;
    if let Some(k) = a.classes {
        arch = arch.with_classes(k);
    }
    if let Some(s) = a.input_size {
        arch = arch.with_input_size(s);
    }
    let model = build::<f32>(&arch, 0)?;
    let summary = summarize(&model, 1, arch.input_size)?;
    write!(out, "{}", summary.to_csv()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> Result<i32> {
    let mut arch = configured_preset(&a.preset, &a.gate)?;
    if let Some(k) = a.classes {
        arch = arch.with_classes(k);
    }
    let mut model = build::<f32>(&arch, a.seed)?;
    if let Some(dir) = &a.checkpoint {
        load_checkpoint(&mut model, dir)?;
    }
    for path in export_first_conv_filters(&model, &a.out)? {
        writeln!(out, "{}", path.display()).map_err(io_err)?;
    }
    Ok(EXIT_OK)
}

fn cmd_make_synthetic(a: &SyntheticArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = SyntheticSpec {
        classes: a.classes,
        per_class: a.per_class,
        dims: (a.channels, a.size, a.size),
        noise: a.noise,
        seed: a.seed,
    };
    let train_set = synthetic_dataset(&spec, Split::Train)?;
    let test_set = synthetic_dataset(
        &SyntheticSpec {
            per_class: a.test_per_class,
            ..spec
        },
        Split::Test,
    )?;
    write_corpus(&a.out, &train_set, &test_set)?;
    writeln!(
        out,
        "wrote {} train and {} test samples to {}",
        train_set.len(),
        test_set.len(),
        a.out.display()
    )
    .map_err(io_err)?;
    Ok(EXIT_OK)
}
