use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean over the spatial plane of every (sample, channel): `N x C x H x W -> N x C`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let count = T::from_usize(h * w).expect("plane size fits in a float");
    let out = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() / count)
        .collect();
    Tensor::new(&[n, c], out)
}

/// Spreads an `N x C` gradient evenly over each plane.
pub fn global_avg_pool_backward<T: Scalar>(grad: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::dim("rank", 4, input_shape.len()));
    };
    if grad.shape() != [n, c] {
        return Err(Error::dim("pool gradient shape", format!("[{n}, {c}]"), format!("{:?}", grad.shape())));
    }
    let count = T::from_usize(h * w).expect("plane size fits in a float");
    let mut out = Vec::with_capacity(n * c * h * w);
    for &g in grad.data() {
        out.extend(std::iter::repeat_n(g / count, h * w));
    }
    Tensor::new(input_shape, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPoolSpec {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 || self.padding >= self.kernel {
            return Err(Error::Config(format!("invalid max pool {self:?}")));
        }
        let dim = |s: usize| {
            if s + 2 * self.padding < self.kernel {
                Err(Error::Config(format!("max pool output is not positive for input {s}")))
            } else {
                Ok((s + 2 * self.padding - self.kernel) / self.stride + 1)
            }
        };
        Ok((dim(h)?, dim(w)?))
    }
}

/// Max pooling; padded positions never win. Returns the output and the flat
/// input index of each selected element.
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, spec: &MaxPoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..spec.kernel {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..spec.kernel {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, argmax))
}

pub fn max_pool2d_backward<T: Scalar>(grad: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    if grad.numel() != argmax.len() {
        return Err(Error::dim("max pool gradient length", argmax.len(), grad.numel()));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&g, &idx) in grad.data().iter().zip(argmax) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}
