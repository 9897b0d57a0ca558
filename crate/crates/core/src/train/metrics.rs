use crate::autograd::{Mode, Module, Tape};
use crate::data::{make_batches, Dataset, Preproc};
use crate::error::{Error, Result};
use crate::kernels::cross_entropy;
use crate::tensor::{Scalar, Tensor};

/// Top-1/top-5 accuracy and mean cross-entropy over a dataset.
/// `0 <= top1 <= top5 <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub epoch: usize,
    pub top1: f64,
    pub top5: f64,
    pub mean_loss: f64,
}

/// Rank of `label` in `row` counting from 0, ties going to the lower index.
pub fn label_rank(row: &[f64], label: usize) -> usize {
    let y = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > y || (v == y && j < label))
        .count()
}

/// Running top-k hit counts.
#[derive(Debug, Clone, Default)]
pub struct TopK {
    pub samples: usize,
    pub top1: usize,
    pub top5: usize,
    pub loss_sum: f64,
}

impl TopK {
    /// Adds a batch of `N x K` logits. NaN logits are rejected.
    pub fn add<T: Scalar>(&mut self, logits: &Tensor<T>, labels: &[usize]) -> Result<()> {
        let (n, k) = logits.dims2()?;
        if labels.len() != n {
            return Err(Error::dim("label count", n, labels.len()));
        }
        if !logits.all_finite() {
            return Err(Error::Numerical {
                context: "evaluation".into(),
                reason: "non-finite logits".into(),
            });
        }
        let values = logits.to_f64_vec();
        for (row, &label) in values.chunks(k).zip(labels) {
            if label >= k {
                return Err(Error::Data(format!("label {label} out of range for {k} classes")));
            }
            let rank = label_rank(row, label);
            self.top1 += usize::from(rank < 1);
            self.top5 += usize::from(rank < 5);
        }
        let (loss, _) = cross_entropy(logits, labels)?;
        self.loss_sum += loss.as_f64() * n as f64;
        self.samples += n;
        Ok(())
    }

    pub fn finish(&self, epoch: usize) -> Result<Metrics> {
        if self.samples == 0 {
            return Err(Error::Contract("cannot compute metrics of an empty set".into()));
        }
        let n = self.samples as f64;
        Ok(Metrics {
            epoch,
            top1: self.top1 as f64 / n,
            top5: self.top5 as f64 / n,
            mean_loss: self.loss_sum / n,
        })
    }
}

/// Metrics of a single batch of logits.
pub fn topk_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Metrics> {
    let mut acc = TopK::default();
    acc.add(logits, labels)?;
    acc.finish(0)
}

/// Eval-mode metrics of `model` on `ds`, in dataset order with no augmentation.
pub fn evaluate<T: Scalar, M: Module<T> + ?Sized>(
    model: &mut M,
    ds: &Dataset,
    preproc: &Preproc,
    batch_size: usize,
    epoch: usize,
) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let mut acc = TopK::default();
    for batch in make_batches::<T>(ds, batch_size, 0, preproc, false)? {
        let mut tape = Tape::new();
        let x = tape.constant(batch.images);
        let logits = model.forward(&mut tape, x, Mode::Eval)?;
        acc.add(tape.value(logits), &batch.labels)?;
    }
    acc.finish(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(label_rank(&[1.0, 1.0, 1.0], 0), 0);
        assert_eq!(label_rank(&[1.0, 1.0, 1.0], 2), 2);
        assert_eq!(label_rank(&[0.0, 3.0, 2.0, 5.0], 2), 2);
    }

    #[test]
    fn third_largest_is_top5_only() {
        let logits = Tensor::<f64>::from_f64(&[2, 6], &[5., 4., 3., 2., 1., 0., 0., 1., 2., 3., 4., 5.]).unwrap();
        let m = topk_from_logits(&logits, &[2, 3]).unwrap();
        assert_eq!((m.top1, m.top5), (0.0, 1.0));
    }

    #[test]
    fn empty_is_contract_error() {
        assert!(matches!(TopK::default().finish(0), Err(Error::Contract(_))));
    }
}
