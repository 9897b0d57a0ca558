use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean cross-entropy of `N x K` logits against integer labels, plus the
/// softmax probabilities (reused by the backward rule).
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::dim("label count", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total = total + (log_z - row[label]);
        probs.extend(row.iter().map(|&v| (v - log_z).exp()));
    }
    let mean = total / T::from_usize(n).expect("batch size fits in a float");
    Ok((mean, Tensor::new(&[n, k], probs)?))
}

/// `d loss / d logits = (softmax - onehot) / N`, scaled by the upstream gradient.
pub fn cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], upstream: T) -> Result<Tensor<T>> {
    let (n, k) = probs.dims2()?;
    let scale = upstream / T::from_usize(n).expect("batch size fits in a float");
    let mut grad = probs.data().to_vec();
    for (row, &label) in grad.chunks_mut(k).zip(labels) {
        row[label] = row[label] - T::one();
        row.iter_mut().for_each(|v| *v = *v * scale);
    }
    Tensor::new(&[n, k], grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let logits = Tensor::<f64>::zeros(&[3, 100]);
        let (loss, _) = cross_entropy(&logits, &[0, 42, 99]).unwrap();
        assert!((loss - 100f64.ln()).abs() < 1e-12);
        assert!((loss - 4.60517).abs() < 1e-5);
    }

    #[test]
    fn confident_correct() {
        let mut logits = Tensor::<f64>::zeros(&[2, 10]);
        logits.data_mut()[3] = 40.0;
        logits.data_mut()[10 + 7] = 40.0;
        let (loss, _) = cross_entropy(&logits, &[3, 7]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(&[1, 4]);
        assert!(matches!(cross_entropy(&logits, &[4]), Err(Error::Data(_))));
    }
}
