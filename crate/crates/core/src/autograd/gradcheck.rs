//! Central finite-difference gradient checking.
//!
//! The loss under test is `sum(f(x) * R)` for a fixed random projection `R`,
//! so every output element contributes a generic weight, or the mean
//! cross-entropy of `f(x)` against random labels. The analytic
//! gradient comes from [`Tape::backward`]; the reference is
//! `(L(p + h) - L(p - h)) / 2h` for every parameter element.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::cross_entropy;
use crate::tensor::{DType, Scalar, Tensor};

use super::module::{Mode, Module};
use super::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckLoss {
    Projection,
    /// Needs `N x K` outputs; labels are drawn uniformly from `0..K`.
    CrossEntropy,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    pub tolerance: f64,
    /// Resample the input while any relu input is closer than this to 0.
    pub kink_margin: f64,
    pub max_resamples: usize,
    /// Relative errors are measured against `max(|numeric|, floor)` where
    /// `floor = floor_fraction * max |numeric|` over the same tensor.
    pub floor_fraction: f64,
    pub seed: u64,
    pub mode: Mode,
    pub check_input: bool,
    pub loss: CheckLoss,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            kink_margin: 1e-3,
            max_resamples: 500,
            floor_fraction: 1e-3,
            seed: 0,
            mode: Mode::Train,
            check_input: true,
            loss: CheckLoss::Projection,
        }
    }
}

impl GradCheckConfig {
    /// Step and tolerance suited to the element type.
    pub fn for_dtype(dtype: DType) -> Self {
        match dtype {
            DType::F64 => Self::default(),
            DType::F32 => Self {
                step: 1e-2,
                tolerance: 5e-2,
                kink_margin: 5e-2,
                ..Self::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub tolerance: f64,
    /// Number of inputs drawn before one was far enough from every relu kink.
    pub attempts: usize,
    pub relu_margin: Option<f64>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    /// `name,numel,max_rel_error,max_abs_error,status` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,numel,max_rel_error,max_abs_error,status\n");
        for e in &self.entries {
            let status = if e.max_rel_error <= self.tolerance { "pass" } else { "FAIL" };
            s.push_str(&format!(
                "{},{},{:.3e},{:.3e},{}\n",
                e.name, e.numel, e.max_rel_error, e.max_abs_error, status
            ));
        }
        s
    }
}

enum Target {
    Projection(Vec<f64>),
    Labels(Vec<usize>),
}

fn eval_loss<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, x: &Tensor<T>, target: &Target, mode: Mode) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = module.forward(&mut tape, xv, mode)?;
    let out = tape.value(out);
    match target {
        Target::Projection(r) => Ok(out.data().iter().zip(r).map(|(v, r)| v.as_f64() * r).sum()),
        Target::Labels(labels) => Ok(cross_entropy(&out.cast::<f64>(), labels)?.0),
    }
}

/// Adds `N(0, std)` noise to every parameter.
///
/// Freshly initialized batch norm (`gamma = 1`, `beta = 0`) followed by a
/// per-channel linear map and another batch norm is scale invariant, which
/// makes some true gradients vanish; checks should run at a generic point.
pub fn jitter_parameters<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in module.parameters_mut() {
        let noise = Tensor::<T>::randn(p.value.shape(), std, &mut rng);
        p.value
            .add_assign(&noise)
            .expect("noise has the parameter's shape");
    }
}

/// Per-element relative error of `analytic` against `numeric`.
pub fn relative_errors(analytic: &[f64], numeric: &[f64], floor_fraction: f64) -> (f64, f64) {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (floor_fraction * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .fold((0.0f64, 0.0f64), |(rel, abs), (a, n)| {
            let diff = (a - n).abs();
            (rel.max(diff / n.abs().max(floor)), abs.max(diff))
        })
}

/// Compares analytic and central-difference gradients for every parameter
/// of `module` (and optionally its input) at a random point.
pub fn grad_check<T: Scalar, M: Module<T> + ?Sized>(
    module: &mut M,
    input_shape: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Draw inputs until the point sits away from every relu kink.
    let mut attempts = 0;
    let (x, margin) = loop {
        attempts += 1;
        let x = Tensor::<T>::randn(input_shape, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        module.forward(&mut tape, xv, cfg.mode)?;
        let margin = tape.min_relu_margin().map(|m| m.as_f64());
        if margin.is_none_or(|m| m >= cfg.kink_margin) {
            break (x, margin);
        }
        if attempts >= cfg.max_resamples {
            return Err(Error::Numerical {
                context: "grad_check".into(),
                reason: format!(
                    "no sample with relu margin >= {} after {attempts} draws",
                    cfg.kink_margin
                ),
            });
        }
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let out = module.forward(&mut tape, xv, cfg.mode)?;
    let out_shape = tape.value(out).shape().to_vec();
    let (loss, target) = match cfg.loss {
        CheckLoss::Projection => {
            let projection = Tensor::<f64>::randn(&out_shape, 1.0, &mut rng);
            let loss = tape.dot(out, projection.cast())?;
            (loss, Target::Projection(projection.into_data()))
        }
        CheckLoss::CrossEntropy => {
            let (n, k) = tape.value(out).dims2()?;
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            (tape.cross_entropy(out, &labels)?, Target::Labels(labels))
        }
    };
    let grads = tape.backward(loss)?;

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    for p in module.parameters() {
        let g = grads
            .param(p)
            .map(|g| g.to_f64_vec())
            .unwrap_or_else(|| vec![0.0; p.numel()]);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: p.name.clone(),
                reason: "non-finite analytic gradient".into(),
            });
        }
        analytic.push((p.name.clone(), g));
    }
    let input_grad = grads.get(xv).map(|g| g.to_f64_vec());

    let h = cfg.step;
    let mut entries = Vec::new();
    let count = module.parameters().len();
    for (pi, (name, a)) in analytic.iter().enumerate().take(count) {
        let mut numeric = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let original = module.parameters()[pi].value.data()[i];
            module.parameters_mut()[pi].value.data_mut()[i] = T::from_f64_lossy(original.as_f64() + h);
            let plus = eval_loss(module, &x, &target, cfg.mode)?;
            module.parameters_mut()[pi].value.data_mut()[i] = T::from_f64_lossy(original.as_f64() - h);
            let minus = eval_loss(module, &x, &target, cfg.mode)?;
            module.parameters_mut()[pi].value.data_mut()[i] = original;
            let d = (plus - minus) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::Numerical {
                    context: name.clone(),
                    reason: "non-finite finite-difference gradient".into(),
                });
            }
            numeric.push(d);
        }
        let (rel, abs) = relative_errors(a, &numeric, cfg.floor_fraction);
        entries.push(ParamCheck {
            name: name.clone(),
            numel: a.len(),
            max_rel_error: rel,
            max_abs_error: abs,
        });
    }

    if cfg.check_input {
        let a = input_grad.unwrap_or_else(|| vec![0.0; x.numel()]);
        let mut xp = x.clone();
        let mut numeric = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let original = x.data()[i];
            xp.data_mut()[i] = T::from_f64_lossy(original.as_f64() + h);
            let plus = eval_loss(module, &xp, &target, cfg.mode)?;
            xp.data_mut()[i] = T::from_f64_lossy(original.as_f64() - h);
            let minus = eval_loss(module, &xp, &target, cfg.mode)?;
            xp.data_mut()[i] = original;
            numeric.push((plus - minus) / (2.0 * h));
        }
        let (rel, abs) = relative_errors(&a, &numeric, cfg.floor_fraction);
        entries.push(ParamCheck {
            name: "input".into(),
            numel: a.len(),
            max_rel_error: rel,
            max_abs_error: abs,
        });
    }

    Ok(GradCheckReport {
        entries,
        tolerance: cfg.tolerance,
        attempts,
        relu_margin: margin,
    })
}
