use std::fs;
use std::path::PathBuf;

use crate::autograd::{Mode, Module, Tape};
use crate::data::{for_each_prefetched, make_batches, Batch, Dataset, Preproc};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::checkpoint::save_checkpoint;
use super::config::{lr_at_epoch, TrainConfig};
use super::metrics::{evaluate, Metrics, TopK};
use super::optim::sgd_step;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,lr,train_loss,val_top1,val_top5";

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Applied to training batches with augmentation and to validation without.
    pub preproc: Preproc,
    pub eval_batch_size: usize,
    /// Stop after this many optimizer steps; the current epoch is then
    /// evaluated and logged as usual.
    pub max_steps: Option<usize>,
    /// Where `metrics.csv`, `best.ckpt` and `manifest.csv` go.
    pub out_dir: Option<PathBuf>,
    /// Batches prepared ahead on a worker thread; 0 prepares inline.
    pub prefetch: usize,
}

impl TrainOptions {
    pub fn new(preproc: Preproc) -> Self {
        Self {
            preproc,
            eval_batch_size: 256,
            max_steps: None,
            out_dir: None,
            prefetch: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training cross-entropy over the samples stepped on.
    pub train_loss: f64,
    /// Top-1 of the training forward passes (train-mode, augmented).
    pub train_top1: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    pub skipped_batches: usize,
    /// Epoch and top-1 of the checkpointed model.
    pub best: Option<(usize, f64)>,
}

impl TrainLog {
    pub fn metrics_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6}\n",
                r.epoch, r.lr, r.train_loss, r.val.top1, r.val.top5
            ));
        }
        s
    }
}

struct EpochState {
    acc: TopK,
    steps: usize,
    skipped: usize,
}

fn train_step<T: Scalar, M: Module<T> + ?Sized>(
    model: &mut M,
    batch: Batch<T>,
    lr: f64,
    cfg: &TrainConfig,
    epoch: usize,
    state: &mut EpochState,
) -> Result<()> {
    if batch.len() < 2 {
        log::warn!("epoch {epoch}: skipping single-sample batch (batch norm needs two samples)");
        state.skipped += 1;
        return Ok(());
    }
    let mut tape = Tape::new();
    let x = tape.constant(batch.images);
    let logits = model.forward(&mut tape, x, Mode::Train)?;
    let loss = tape.cross_entropy(logits, &batch.labels)?;
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::Numerical {
            context: format!("epoch {epoch}, step {}", state.steps),
            reason: format!("training loss became {value}"),
        });
    }
    state.acc.add(tape.value(logits), &batch.labels)?;
    let grads = tape.backward(loss)?;
    model.zero_grad();
    model.accumulate_grads(&grads)?;
    sgd_step(model.parameters_mut(), lr, cfg.momentum, cfg.weight_decay)?;
    state.steps += 1;
    Ok(())
}

/// Trains `model` for `cfg.epochs` epochs (or until `opts.max_steps`),
/// evaluating on `val` after each epoch and checkpointing the best top-1.
pub fn train<T: Scalar, M: Module<T> + ?Sized>(
    model: &mut M,
    train_set: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainLog> {
    cfg.validate()?;
    opts.preproc.validate(train_set.channels)?;
    if train_set.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let eval_preproc = opts.preproc.clone().without_augmentation();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let budget = opts.max_steps.map_or(usize::MAX, |m| m.saturating_sub(log.steps));
        if budget == 0 {
            break;
        }
        let lr = lr_at_epoch(cfg, epoch)?;
        let batches = make_batches::<T>(train_set, cfg.batch_size, cfg.epoch_seed(epoch), &opts.preproc, true)?;
        let mut state = EpochState {
            acc: TopK::default(),
            steps: 0,
            skipped: 0,
        };
        let batches = batches.take(budget);
        if opts.prefetch > 0 {
            for_each_prefetched(batches, opts.prefetch, |b| train_step(model, b, lr, cfg, epoch, &mut state))?;
        } else {
            for b in batches {
                train_step(model, b, lr, cfg, epoch, &mut state)?;
            }
        }
        log.steps += state.steps;
        log.skipped_batches += state.skipped;
        let trained = state.acc.finish(epoch).map_err(|_| {
            Error::Data(format!("epoch {epoch} had no batch with at least two samples"))
        })?;
        let metrics = evaluate(model, val, &eval_preproc, opts.eval_batch_size, epoch)?;
        log::info!(
            "epoch {epoch} lr {lr} loss {:.4} train top1 {:.4} val top1 {:.4} top5 {:.4}",
            trained.mean_loss,
            trained.top1,
            metrics.top1,
            metrics.top5
        );
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: trained.mean_loss,
            train_top1: trained.top1,
            val: metrics,
        });
        let improved = log.best.is_none_or(|(_, best)| metrics.top1 > best);
        if improved {
            log.best = Some((epoch, metrics.top1));
        }
        if let Some(dir) = &opts.out_dir {
            if improved {
                save_checkpoint(&*model, dir)?;
            }
            let path = dir.join(METRICS_FILE);
            fs::write(&path, log.metrics_csv()).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(log)
}
