//! Central finite differences, the independent oracle every backward pass is
//! checked against. Meant to run at f64; f32 differences are too noisy.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Gradient of a scalar-valued `f` at `x` by central differences:
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per element.
pub fn finite_diff_grad<T: Scalar>(
    f: &mut dyn FnMut(&Tensor<T>) -> Result<f64>,
    x: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    assert!(eps > 0.0, "eps must be positive");
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + T::from_f64(eps);
        let up = f(&probe)?;
        probe.data_mut()[i] = original - T::from_f64(eps);
        let down = f(&probe)?;
        probe.data_mut()[i] = original;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite_diff_grad evaluation at element {i}"),
            });
        }
        grad.data_mut()[i] = T::from_f64((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// Same difference quotient, but only at the listed flat indices. Used for
/// whole-model checks where differencing every parameter would be quadratic.
pub fn finite_diff_grad_at<T: Scalar>(
    f: &mut dyn FnMut(&Tensor<T>) -> Result<f64>,
    x: &Tensor<T>,
    coords: &[usize],
    eps: f64,
) -> Result<Vec<f64>> {
    assert!(eps > 0.0, "eps must be positive");
    let mut out = Vec::with_capacity(coords.len());
    let mut probe = x.clone();
    for &i in coords {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + T::from_f64(eps);
        let up = f(&probe)?;
        probe.data_mut()[i] = original - T::from_f64(eps);
        let down = f(&probe)?;
        probe.data_mut()[i] = original;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite_diff_grad_at evaluation at element {i}"),
            });
        }
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Worst-case elementwise relative error between two gradients, with the
/// denominator floored so near-zero gradients compare absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = 1e-6 + inf_norm(analytic).max(inf_norm(numeric));
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}
