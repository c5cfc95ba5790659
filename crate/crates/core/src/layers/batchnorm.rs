//! Per-channel batch normalization over [N, C, H, W]. Train mode normalizes
//! by batch statistics and folds them into the running estimates; eval mode
//! uses the running estimates only, so each sample's output is independent of
//! the rest of the batch. Statistics accumulate in f64 regardless of the
//! working dtype.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Scalar, Tensor};

/// Learned affine plus running statistics for one batchnorm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNormState<T> {
    /// Fresh state: gamma 1, beta 0, running stats (0, 1), standard defaults.
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self, x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = match x.shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    context: format!("{what} input must be rank 4, got {other:?}"),
                })
            }
        };
        if c != self.channels()
            || self.beta.len() != c
            || self.running_mean.len() != c
            || self.running_var.len() != c
        {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "{what}: input has {c} channels, state has {}",
                    self.channels()
                ),
            });
        }
        Ok((n, c, h * w))
    }
}

/// Eight-lane f64 sum of one plane. The independent accumulators break the
/// add dependency chain; the combine order is fixed, so results stay
/// reproducible run to run.
fn plane_sum<T: Scalar>(plane: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut chunks = plane.chunks_exact(8);
    for ch in &mut chunks {
        for (lane, a) in acc.iter_mut().enumerate() {
            *a += ch[lane].as_f64();
        }
    }
    let mut tail = 0.0f64;
    for &v in chunks.remainder() {
        tail += v.as_f64();
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Eight-lane f64 sum of (v - mu)² over one plane.
fn plane_sumsq<T: Scalar>(plane: &[T], mu: f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut chunks = plane.chunks_exact(8);
    for ch in &mut chunks {
        for (lane, a) in acc.iter_mut().enumerate() {
            let d = ch[lane].as_f64() - mu;
            *a = d.mul_add(d, *a);
        }
    }
    let mut tail = 0.0f64;
    for &v in chunks.remainder() {
        let d = v.as_f64() - mu;
        tail = d.mul_add(d, tail);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Per-channel mean and biased variance over batch and spatial axes.
fn batch_stats<T: Scalar>(x: &Tensor<T>, n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            mean[ci] += plane_sum(plane);
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            var[ci] += plane_sumsq(plane, mean[ci]);
        }
    }
    for v in var.iter_mut() {
        *v /= m;
    }
    (mean, var)
}

/// y = gamma · (x - mean)/sqrt(var + eps) + beta. Train mode uses batch
/// statistics and returns state with running estimates advanced by momentum
/// (running variance stored unbiased); eval mode uses the running estimates
/// and returns the state unchanged.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormState<T>)> {
    let (n, c, hw) = state.validate(x, "batchnorm2d")?;
    let mut out = Tensor::<T>::zeros(x.shape());
    let mut new_state = state.clone();

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            let m = n * hw;
            if m < 2 {
                return Err(Error::DegenerateBatch {
                    context: format!(
                        "batchnorm2d train mode needs at least 2 values per channel, got {m}"
                    ),
                });
            }
            let (mean, var) = batch_stats(x, n, c, hw);
            let mom = state.momentum;
            let unbias = m as f64 / (m as f64 - 1.0);
            for ci in 0..c {
                let rm = state.running_mean.data()[ci].as_f64();
                let rv = state.running_var.data()[ci].as_f64();
                new_state.running_mean.data_mut()[ci] =
                    T::from_f64((1.0 - mom) * rm + mom * mean[ci]);
                new_state.running_var.data_mut()[ci] =
                    T::from_f64((1.0 - mom) * rv + mom * var[ci] * unbias);
            }
            (mean, var)
        }
        Mode::Eval => (
            state.running_mean.iter().map(|v| v.as_f64()).collect(),
            state.running_var.iter().map(|v| v.as_f64()).collect(),
        ),
    };

    for ci in 0..c {
        let inv = 1.0 / (var[ci] + state.eps).sqrt();
        let g = state.gamma.data()[ci].as_f64();
        let b = state.beta.data()[ci].as_f64();
        let mu = mean[ci];
        // y = x·scale + shift, the affine form of gamma·(x - mu)·inv + beta.
        let scale = g * inv;
        let shift = b - mu * scale;
        for ni in 0..n {
            let src = &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            let dst = &mut out.data_mut()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::from_f64(s.as_f64().mul_add(scale, shift));
            }
        }
    }
    out.check_finite("batchnorm2d output")?;
    Ok((out, new_state))
}

/// Exact train-mode gradients through the batch statistics:
/// dx = gamma/sqrt(var+eps) · (dy - mean(dy) - x̂ · mean(dy·x̂)) per channel.
pub fn batchnorm2d_grads<T: Scalar>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, hw) = state.validate(x, "batchnorm2d_grads")?;
    if dy.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "batchnorm2d_grads cotangent shape {:?} vs input {:?}",
                dy.shape(),
                x.shape()
            ),
        });
    }
    let m = n * hw;
    if m < 2 {
        return Err(Error::DegenerateBatch {
            context: format!(
                "batchnorm2d_grads needs at least 2 values per channel, got {m}"
            ),
        });
    }
    let (mean, var) = batch_stats(x, n, c, hw);

    let mut dx = Tensor::<T>::zeros(x.shape());
    let mut dgamma = Tensor::<T>::zeros(&[c]);
    let mut dbeta = Tensor::<T>::zeros(&[c]);
    for ci in 0..c {
        let inv = 1.0 / (var[ci] + state.eps).sqrt();
        let mu = mean[ci];
        // First pass: sum(dy) and sum(dy·x̂) for the channel, eight lanes
        // each so the f64 adds overlap.
        let mut acc_dy = [0.0f64; 8];
        let mut acc_dy_xh = [0.0f64; 8];
        let mut tail_dy = 0.0f64;
        let mut tail_dy_xh = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            let xs = &x.data()[base..base + hw];
            let ds = &dy.data()[base..base + hw];
            let mut cx = xs.chunks_exact(8);
            let mut cd = ds.chunks_exact(8);
            for (chx, chd) in (&mut cx).zip(&mut cd) {
                for lane in 0..8 {
                    let xh = (chx[lane].as_f64() - mu) * inv;
                    let dv = chd[lane].as_f64();
                    acc_dy[lane] += dv;
                    acc_dy_xh[lane] = dv.mul_add(xh, acc_dy_xh[lane]);
                }
            }
            for (&xv, &dv) in cx.remainder().iter().zip(cd.remainder()) {
                let xh = (xv.as_f64() - mu) * inv;
                tail_dy += dv.as_f64();
                tail_dy_xh += dv.as_f64() * xh;
            }
        }
        let fold = |a: &[f64; 8], t: f64| {
            ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7])) + t
        };
        let sum_dy = fold(&acc_dy, tail_dy);
        let sum_dy_xh = fold(&acc_dy_xh, tail_dy_xh);
        dbeta.data_mut()[ci] = T::from_f64(sum_dy);
        dgamma.data_mut()[ci] = T::from_f64(sum_dy_xh);

        let g = state.gamma.data()[ci].as_f64();
        let mean_dy = sum_dy / m as f64;
        let mean_dy_xh = sum_dy_xh / m as f64;
        // dx = a·dy + b·x + k, the affine expansion of
        // g·inv·(dy - mean_dy - x̂·mean_dy_xh) with x̂ = (x - mu)·inv.
        let a = g * inv;
        let bcoef = -g * inv * inv * mean_dy_xh;
        let k = -g * inv * mean_dy - bcoef * mu;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            let xs = &x.data()[base..base + hw];
            let ds = &dy.data()[base..base + hw];
            let out = &mut dx.data_mut()[base..base + hw];
            for ((o, &xv), &dv) in out.iter_mut().zip(xs).zip(ds) {
                *o = T::from_f64(dv.as_f64().mul_add(a, xv.as_f64().mul_add(bcoef, k)));
            }
        }
    }
    dx.check_finite("batchnorm2d_grads dx")?;
    Ok((dx, dgamma, dbeta))
}
