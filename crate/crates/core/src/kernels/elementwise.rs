use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // Split by sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax of an `R x C` matrix with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = x.dims2()?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / total);
    }
    Tensor::new(x.shape(), out)
}

/// Concatenates along axis 1. Parts are `N x Ci` or `N x Ci x H x W`.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat_channels needs at least one part".into()))?;
    if first.rank() < 2 {
        return Err(Error::dim("rank", ">= 2", first.rank()));
    }
    let n = first.shape()[0];
    let tail = &first.shape()[2..];
    for p in parts {
        if p.rank() != first.rank() || p.shape()[0] != n || &p.shape()[2..] != tail {
            return Err(Error::dim(
                "non-channel axes",
                format!("{:?}", first.shape()),
                format!("{:?}", p.shape()),
            ));
        }
    }
    let inner: usize = tail.iter().product();
    let total_c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(n * total_c * inner);
    for s in 0..n {
        for p in parts {
            let span = p.shape()[1] * inner;
            out.extend_from_slice(&p.data()[s * span..(s + 1) * span]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = total_c;
    Tensor::new(&shape, out)
}

/// Inverse of [`concat_channels`]: splits axis 1 into the given widths.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    if x.rank() < 2 {
        return Err(Error::dim("rank", ">= 2", x.rank()));
    }
    let total: usize = widths.iter().sum();
    if total != x.shape()[1] {
        return Err(Error::dim("channel axis", x.shape()[1], total));
    }
    let n = x.shape()[0];
    let inner: usize = x.shape()[2..].iter().product();
    let mut parts: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(n * w * inner)).collect();
    for s in 0..n {
        let mut off = s * total * inner;
        for (part, &w) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&x.data()[off..off + w * inner]);
            off += w * inner;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(data, &w)| {
            let mut shape = x.shape().to_vec();
            shape[1] = w;
            Tensor::new(&shape, data)
        })
        .collect()
}

fn check_gates<T: Scalar>(input: &Tensor<T>, gates: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if gates.shape() != [n, c] {
        return Err(Error::dim(
            "gate shape (N, C)",
            format!("[{n}, {c}]"),
            format!("{:?}", gates.shape()),
        ));
    }
    Ok((n, c, h * w))
}

/// `out[n][c][h][w] = input[n][c][h][w] * gates[n][c]`.
pub fn channel_scale<T: Scalar>(input: &Tensor<T>, gates: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, plane) = check_gates(input, gates)?;
    let mut out = input.data().to_vec();
    for (chunk, &g) in out.chunks_mut(plane).zip(gates.data()) {
        chunk.iter_mut().for_each(|v| *v = *v * g);
    }
    Tensor::new(input.shape(), out)
}

/// Gradients of [`channel_scale`] for the input and the gates.
pub fn channel_scale_backward<T: Scalar>(
    input: &Tensor<T>,
    gates: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, _, plane) = check_gates(input, gates)?;
    input.expect_same_shape(grad_out)?;
    let dx = channel_scale(grad_out, gates)?;
    let dg = input
        .data()
        .chunks(plane)
        .zip(grad_out.data().chunks(plane))
        .map(|(x, g)| x.iter().zip(g).map(|(&a, &b)| a * b).sum::<T>())
        .collect();
    Ok((dx, Tensor::new(gates.shape(), dg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activations() {
        let x = Tensor::<f64>::from_f64(&[3], &[-1., 0., 2.]).unwrap();
        assert_eq!(relu(&x).data(), &[0., 0., 2.]);
        assert_eq!(sigmoid(&Tensor::<f64>::scalar(0.0)).data(), &[0.5]);
        let big = sigmoid(&Tensor::<f32>::from_f64(&[2], &[-1000., 1000.]).unwrap());
        assert_eq!(big.data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_is_stable() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1000., 1000.]).unwrap();
        assert_eq!(softmax_rows(&x).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn add_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        let b = Tensor::<f64>::zeros(&[4]);
        assert!(matches!(add(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn concat_rows() {
        let a = Tensor::<f64>::from_f64(&[1, 2], &[1., 2.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[1, 2], &[3., 4.]).unwrap();
        assert_eq!(concat_channels(&[&a, &b]).unwrap().data(), &[1., 2., 3., 4.]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let c = Tensor::<f64>::zeros(&[2, 2]);
        assert!(concat_channels(&[&a, &c]).is_err());
    }

    #[test]
    fn gates_identity_and_null() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 1, 2], &[1., -2., 3., 4.]).unwrap();
        assert_eq!(channel_scale(&x, &Tensor::ones(&[1, 2])).unwrap(), x);
        assert!(channel_scale(&x, &Tensor::zeros(&[1, 2])).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(channel_scale(&x, &Tensor::zeros(&[1, 3])).is_err());
    }
}
