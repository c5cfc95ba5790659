//! Adam and RMSProp, operating in place on a ParamSet, plus the weight
//! clipping the Wasserstein critic needs. Accumulator slots are created on
//! first use in gradient iteration order, so optimizer state is as
//! deterministic as the parameters themselves.

use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::tensor::{Scalar, Tensor};

/// Moment accumulators plus the shared step counter. Adam uses `m` and `v`;
/// RMSProp uses only `v`. The counter advances once per step call, not per
/// tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptState<T: Scalar> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Scalar> OptState<T> {
    pub fn new() -> Self {
        OptState {
            m: ParamSet::new(),
            v: ParamSet::new(),
            t: 0,
        }
    }
}

fn slot<'a, T: Scalar>(
    store: &'a mut ParamSet<T>,
    name: &str,
    shape: &[usize],
) -> Result<&'a mut Tensor<T>> {
    if store.get(name).is_none() {
        store.insert(name.to_string(), Tensor::zeros(shape))?;
    }
    let t = store.get_mut(name).expect("slot just ensured");
    if t.shape() != shape {
        return Err(Error::ShapeMismatch {
            context: format!(
                "optimizer slot {name} has shape {:?}, gradient has {:?}",
                t.shape(),
                shape
            ),
        });
    }
    Ok(t)
}

fn check_grad<T: Scalar>(name: &str, grad: &Tensor<T>, param: &Tensor<T>) -> Result<()> {
    if grad.shape() != param.shape() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                grad.shape(),
                param.shape()
            ),
        });
    }
    grad.check_finite(&format!("gradient for {name}"))
}

/// Bias-corrected Adam: m ← β1·m + (1-β1)·g, v ← β2·v + (1-β2)·g²,
/// p ← p - lr·m̂/(√v̂ + eps). Skips parameters without a gradient entry.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut OptState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    state.t += 1;
    let bias1 = 1.0 - beta1.powi(state.t as i32);
    let bias2 = 1.0 - beta2.powi(state.t as i32);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (nb1, nb2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    for (name, grad) in grads.iter() {
        let param = params.get_mut(name).ok_or_else(|| Error::InvalidArgument {
            context: format!("gradient for unknown parameter {name}"),
        })?;
        check_grad(name, grad, param)?;
        let m = slot(&mut state.m, name, grad.shape())?;
        for (mv, &gv) in m.data_mut().iter_mut().zip(grad.data()) {
            *mv = *mv * b1 + gv * nb1;
        }
        let m_now = m.clone();
        let v = slot(&mut state.v, name, grad.shape())?;
        for (vv, &gv) in v.data_mut().iter_mut().zip(grad.data()) {
            *vv = *vv * b2 + gv * gv * nb2;
        }
        for ((pv, &mv), &vv) in param
            .data_mut()
            .iter_mut()
            .zip(m_now.data())
            .zip(v.data())
        {
            let m_hat = mv.as_f64() / bias1;
            let v_hat = vv.as_f64() / bias2;
            *pv = T::from_f64(pv.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
        }
        param.check_finite(&format!("parameter {name} after adam_step"))?;
    }
    Ok(())
}

/// RMSProp: v ← ρ·v + (1-ρ)·g², p ← p - lr·g/(√v + eps).
pub fn rmsprop_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut OptState<T>,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    state.t += 1;
    let (r, nr) = (T::from_f64(rho), T::from_f64(1.0 - rho));
    for (name, grad) in grads.iter() {
        let param = params.get_mut(name).ok_or_else(|| Error::InvalidArgument {
            context: format!("gradient for unknown parameter {name}"),
        })?;
        check_grad(name, grad, param)?;
        let v = slot(&mut state.v, name, grad.shape())?;
        for (vv, &gv) in v.data_mut().iter_mut().zip(grad.data()) {
            *vv = *vv * r + gv * gv * nr;
        }
        for ((pv, &gv), &vv) in param.data_mut().iter_mut().zip(grad.data()).zip(v.data()) {
            *pv = T::from_f64(pv.as_f64() - lr * gv.as_f64() / (vv.as_f64().sqrt() + eps));
        }
        param.check_finite(&format!("parameter {name} after rmsprop_step"))?;
    }
    Ok(())
}

/// Clamps every trainable parameter elementwise to [-c, c]. Batchnorm
/// running statistics are never touched; the affine gamma/beta pair is
/// clipped unless `include_bn` is false.
pub fn clip_weights<T: Scalar>(params: &mut ParamSet<T>, c: f64, include_bn: bool) {
    assert!(c > 0.0, "clip constant must be positive");
    let lo = T::from_f64(-c);
    let hi = T::from_f64(c);
    for (name, tensor) in params.iter_mut() {
        if !ParamSet::<T>::is_trainable(name) {
            continue;
        }
        if !include_bn && (name.ends_with(".gamma") || name.ends_with(".beta")) {
            continue;
        }
        for v in tensor.data_mut().iter_mut() {
            if *v < lo {
                *v = lo;
            } else if *v > hi {
                *v = hi;
            }
        }
    }
}
