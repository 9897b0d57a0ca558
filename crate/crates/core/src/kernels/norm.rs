//! Per-channel batch normalization over (N, H, W).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean and (biased) variance per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

/// Forward result; `xhat` and `inv_std` are what the backward rule needs.
#[derive(Debug, Clone)]
pub struct BnForward<T> {
    pub output: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: BnMode,
    eps: f64,
    momentum: f64,
) -> Result<BnForward<T>> {
    let (n, c, h, w) = input.dims4()?;
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running mean", &stats.mean), ("running var", &stats.var)] {
        if t.shape() != [c] {
            return Err(Error::dim(format!("batch norm {name} length"), c, format!("{:?}", t.shape())));
        }
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let eps_t = T::from_f64_lossy(eps);

    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(Error::DegenerateBatch(count));
            }
            let m = T::from_usize(count).expect("batch size fits in a float");
            let mut means = Vec::with_capacity(c);
            let mut vars = Vec::with_capacity(c);
            for ch in 0..c {
                let planes = (0..n).map(|s| &x[(s * c + ch) * plane..(s * c + ch + 1) * plane]);
                let mean = planes.clone().flat_map(|p| p.iter().copied()).sum::<T>() / m;
                let var = planes
                    .flat_map(|p| p.iter().map(move |&v| (v - mean) * (v - mean)))
                    .sum::<T>()
                    / m;
                means.push(mean);
                vars.push(var);
            }
            let mom = T::from_f64_lossy(momentum);
            let keep = T::one() - mom;
            for ch in 0..c {
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = keep * *rm + mom * means[ch];
                let rv = &mut stats.var.data_mut()[ch];
                *rv = keep * *rv + mom * vars[ch];
            }
            (means, vars)
        }
        BnMode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + plane {
                let nv = (x[i] - mu) * is;
                xhat[i] = nv;
                out[i] = g * nv + b;
            }
        }
    }
    Ok(BnForward {
        output: Tensor::new(input.shape(), out)?,
        xhat: Tensor::new(input.shape(), xhat)?,
        inv_std,
    })
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Backward through batch norm. In train mode the derivative flows through
/// the batch statistics; in eval mode the normalization is a fixed affine map.
pub fn batchnorm2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    mode: BnMode,
) -> Result<BnGrads<T>> {
    grad_out.expect_same_shape(xhat)?;
    let (n, c, h, w) = xhat.dims4()?;
    let plane = h * w;
    let dy = grad_out.data();
    let xh = xhat.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                dbeta[ch] = dbeta[ch] + dy[i];
                dgamma[ch] = dgamma[ch] + dy[i] * xh[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    let m = T::from_usize(n * plane).expect("batch size fits in a float");
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let scale = gamma.data()[ch] * inv_std[ch];
            match mode {
                BnMode::Train => {
                    let k = scale / m;
                    for i in off..off + plane {
                        dx[i] = k * (m * dy[i] - dbeta[ch] - xh[i] * dgamma[ch]);
                    }
                }
                BnMode::Eval => {
                    for i in off..off + plane {
                        dx[i] = scale * dy[i];
                    }
                }
            }
        }
    }
    Ok(BnGrads {
        input: Tensor::new(xhat.shape(), dx)?,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = t.dims4().unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|s| t.data()[(s * c + ch) * h * w..(s * c + ch + 1) * h * w].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn normalizes_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&[4, 3, 5, 5], 3.0, &mut rng).map(|v| v + 2.0);
        let mut stats = RunningStats::new(3);
        let out = batchnorm2d(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), &mut stats, BnMode::Train, DEFAULT_EPS, DEFAULT_MOMENTUM)
            .unwrap()
            .output;
        for ch in 0..3 {
            let (m, v) = channel_moments(&out, ch);
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-5, "variance {v}");
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(&[2, 2, 3, 3], 1.0, &mut rng);
        let beta = Tensor::from_f64(&[2], &[0.5, -1.5]).unwrap();
        let mut stats = RunningStats::new(2);
        let out = batchnorm2d(&x, &Tensor::zeros(&[2]), &beta, &mut stats, BnMode::Train, DEFAULT_EPS, DEFAULT_MOMENTUM).unwrap();
        for (i, v) in out.output.data().iter().enumerate() {
            assert_eq!(*v, if (i / 9) % 2 == 0 { 0.5 } else { -1.5 });
        }
    }

    #[test]
    fn eval_replays_captured_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(&[3, 4, 4, 4], 2.0, &mut rng);
        let gamma = Tensor::randn(&[4], 1.0, &mut rng);
        let beta = Tensor::randn(&[4], 1.0, &mut rng);
        let mut stats = RunningStats::new(4);
        let train = batchnorm2d(&x, &gamma, &beta, &mut stats, BnMode::Train, DEFAULT_EPS, 1.0).unwrap();
        let eval = batchnorm2d(&x, &gamma, &beta, &mut stats, BnMode::Eval, DEFAULT_EPS, 1.0).unwrap();
        for (a, b) in train.output.data().iter().zip(eval.output.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn degenerate_batch() {
        let x = Tensor::<f64>::ones(&[1, 2, 1, 1]);
        let mut stats = RunningStats::new(2);
        let err = batchnorm2d(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &mut stats, BnMode::Train, DEFAULT_EPS, DEFAULT_MOMENTUM);
        assert!(matches!(err, Err(Error::DegenerateBatch(1))));
        assert!(batchnorm2d(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &mut stats, BnMode::Eval, DEFAULT_EPS, DEFAULT_MOMENTUM).is_ok());
    }
}
