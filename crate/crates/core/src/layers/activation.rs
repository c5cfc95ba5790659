//! Elementwise activations with exact gradients. The gradient functions take
//! the pre-activation input, so callers only need to keep what they already
//! have in the forward cache.

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// Negative-side slope, 0.2 throughout the discriminator.
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::LeakyRelu(alpha) => {
            let a = T::from_f64(alpha);
            x.map(|v| if v > T::zero() { v } else { v * a })
        }
        Activation::Tanh => x.map(|v| v.tanh()),
        Activation::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
    }
}

/// dx for y = activation(x), given the pre-activation x and cotangent dy.
pub fn activation_grad<T: Scalar>(x: &Tensor<T>, kind: Activation, dy: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.shape(), dy.shape(), "activation_grad shape mismatch");
    let mut dx = Tensor::<T>::zeros(x.shape());
    let out = dx.data_mut();
    let xs = x.data();
    let ds = dy.data();
    match kind {
        Activation::Relu => {
            for ((o, &v), &d) in out.iter_mut().zip(xs).zip(ds) {
                *o = if v > T::zero() { d } else { T::zero() };
            }
        }
        Activation::LeakyRelu(alpha) => {
            let a = T::from_f64(alpha);
            for ((o, &v), &d) in out.iter_mut().zip(xs).zip(ds) {
                *o = if v > T::zero() { d } else { d * a };
            }
        }
        Activation::Tanh => {
            for ((o, &v), &d) in out.iter_mut().zip(xs).zip(ds) {
                let t = v.tanh();
                *o = d * (T::one() - t * t);
            }
        }
        Activation::Sigmoid => {
            for ((o, &v), &d) in out.iter_mut().zip(xs).zip(ds) {
                let s = T::one() / (T::one() + (-v).exp());
                *o = d * s * (T::one() - s);
            }
        }
    }
    dx
}
