use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `a (R x K) * b (K x C)`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, k) = a.dims2()?;
    let (k2, c) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul inner dimension", k, k2));
    }
    let mut out = vec![T::zero(); r * c];
    T::gemm(r, k, c, a.data(), (k, 1), b.data(), (c, 1), &mut out, (c, 1), false);
    Tensor::new(&[r, c], out)
}

/// `a^T (K x R)^T * b`, i.e. `a` is `R x K` read transposed: result `K x C` for `b: R x C`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, k) = a.dims2()?;
    let (r2, c) = b.dims2()?;
    if r != r2 {
        return Err(Error::dim("matmul_tn shared dimension", r, r2));
    }
    let mut out = vec![T::zero(); k * c];
    T::gemm(k, r, c, a.data(), (1, k), b.data(), (c, 1), &mut out, (c, 1), false);
    Tensor::new(&[k, c], out)
}

/// `a (R x C) * b^T` with `b: K x C`, result `R x K`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = a.dims2()?;
    let (k, c2) = b.dims2()?;
    if c != c2 {
        return Err(Error::dim("matmul_nt shared dimension", c, c2));
    }
    let mut out = vec![T::zero(); r * k];
    T::gemm(r, c, k, a.data(), (c, 1), b.data(), (1, c), &mut out, (k, 1), false);
    Tensor::new(&[r, k], out)
}

/// Fully connected layer: `x (N x in) * w (in x out) + b`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut y = matmul(x, w)?;
    if let Some(b) = b {
        let (_, out) = y.dims2()?;
        if b.shape() != [out] {
            return Err(Error::dim("linear bias length", out, format!("{:?}", b.shape())));
        }
        for row in y.data_mut().chunks_mut(out) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v = *v + bv;
            }
        }
    }
    Ok(y)
}

/// Column sums of an `R x C` matrix.
pub fn sum_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = x.dims2()?;
    let mut acc = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    Tensor::new(&[c], acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_ones() {
        let eye = Tensor::<f64>::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(matmul(&eye, &b).unwrap(), b);
        let ones_r = Tensor::<f64>::ones(&[1, 4]);
        let ones_c = Tensor::<f64>::ones(&[4, 1]);
        assert_eq!(matmul(&ones_r, &ones_c).unwrap().data(), &[4.0]);
    }

    #[test]
    fn inner_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn transposed_variants() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 2], &[1., 0., 0., 2.]).unwrap();
        // a^T b
        assert_eq!(matmul_tn(&a, &b).unwrap().data(), &[1., 8., 2., 10., 3., 12.]);
        // b a? use nt: a a^T
        assert_eq!(matmul_nt(&a, &a).unwrap().data(), &[14., 32., 32., 77.]);
    }
}
