use crate::autograd::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// SGD with momentum and coupled L2 weight decay, applied to every parameter:
///
/// ```text
/// g' = grad + weight_decay * p
/// v  = momentum * v + g'
/// p  = p - lr * v
/// ```
///
/// All gradients are checked before any parameter moves, so a failed step
/// leaves the model untouched.
pub fn sgd_step<'a, T, I>(params: I, lr: f64, momentum: f64, weight_decay: f64) -> Result<()>
where
    T: Scalar,
    I: IntoIterator<Item = &'a mut Parameter<T>>,
{
    let mut params: Vec<&mut Parameter<T>> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::Numerical {
            context: p.name.clone(),
            reason: "non-finite gradient in optimizer step".into(),
        });
    }
    let (lr, m, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum), T::from_f64_lossy(weight_decay));
    for p in params.iter_mut() {
        let Parameter {
            value, grad, velocity, ..
        } = &mut **p;
        for ((w, &g), v) in value.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
            *v = m * *v + g + wd * *w;
            *w = *w - lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(v: &[f64], g: &[f64]) -> Parameter<f64> {
        let mut p = Parameter::new("p", Tensor::from_f64(&[v.len()], v).unwrap());
        p.grad = Tensor::from_f64(&[g.len()], g).unwrap();
        p
    }

    #[test]
    fn vanilla_step() {
        let mut p = param(&[1.0, -2.0], &[0.5, 0.25]);
        sgd_step([&mut p], 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p.value.data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn momentum_recurrence() {
        let mut p = param(&[0.0], &[2.0]);
        sgd_step([&mut p], 0.1, 0.9, 0.0).unwrap();
        sgd_step([&mut p], 0.1, 0.9, 0.0).unwrap();
        // v1 = g, v2 = 0.9 g + g.
        let expected = -(0.1 * 2.0 + 0.1 * (0.9 * 2.0 + 2.0));
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut a = param(&[1.0], &[0.0]);
        let mut b = param(&[1.0], &[f64::NAN]);
        b.name = "layer.weight".into();
        let err = sgd_step([&mut a, &mut b], 0.1, 0.9, 0.0).unwrap_err();
        assert!(err.to_string().contains("layer.weight"));
        assert_eq!(a.value.data(), &[1.0]);
    }
}
