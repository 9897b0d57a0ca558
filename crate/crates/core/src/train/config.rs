use crate::error::{Error, Result};
use crate::tensor::DType;

/// Optimizer and schedule settings. Defaults are the reference recipe:
/// SGD with momentum 0.9, L2 weight decay 1e-4, learning rate 0.01 divided
/// by 10 every 15 epochs, 50 epochs of batch 256.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step_epochs: usize,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dtype: DType,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            step_epochs: 15,
            decay: 0.1,
            epochs: 50,
            batch_size: 256,
            seed: 0,
            dtype: DType::F32,
        }
    }
}

impl TrainConfig {
    /// `lr0 >= 0` (0 gives a null update), `0 <= momentum < 1`,
    /// `0 < decay <= 1`, `step_epochs, epochs, batch_size >= 1`.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be a finite non-negative number, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if self.step_epochs == 0 {
            return fail("step epochs must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        Ok(())
    }

    /// Shuffle and augmentation seed of `epoch`.
    pub fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

/// `lr0 * decay^floor(epoch / step_epochs)`.
///
/// When `1 / decay` is an integer `d` the rate is `lr0 / d^k`, which keeps
/// values such as `0.01 -> 0.001 -> 0.0001` exact in binary floating point.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} outside schedule of {} epochs",
            cfg.epochs
        )));
    }
    let k = (epoch / cfg.step_epochs.max(1)) as i32;
    let inv = 1.0 / cfg.decay;
    let d = inv.round();
    if d >= 1.0 && (inv - d).abs() <= 1e-9 * d {
        Ok(cfg.lr0 / d.powi(k))
    } else {
        Ok(cfg.lr0 * cfg.decay.powi(k))
    }
}
