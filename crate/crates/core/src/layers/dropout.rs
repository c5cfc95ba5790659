//! Inverted dropout: kept entries are scaled by 1/(1-p) at train time so the
//! expected activation matches eval mode and inference needs no rescaling.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// Returns (y, mask) with y = x ⊙ mask. Train mode draws one uniform per
/// element from `rng` and zeroes it with probability p; eval mode is the
/// identity and leaves `rng` untouched.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument {
            context: format!("dropout probability {p} outside [0, 1)"),
        });
    }
    if mode == Mode::Eval {
        return Ok((x.clone(), Tensor::filled(x.shape(), T::one())));
    }
    let scale = T::from_f64(1.0 / (1.0 - p));
    let mut mask = Tensor::<T>::zeros(x.shape());
    let mut y = Tensor::<T>::zeros(x.shape());
    for i in 0..x.len() {
        if rng.next_f64() >= p {
            mask.data_mut()[i] = scale;
            y.data_mut()[i] = x.data()[i] * scale;
        }
    }
    Ok((y, mask))
}

/// Backward pass: the same scaled mask gates the cotangent.
pub fn dropout_grad<T: Scalar>(mask: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if mask.shape() != dy.shape() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "dropout_grad mask shape {:?} vs cotangent {:?}",
                mask.shape(),
                dy.shape()
            ),
        });
    }
    let mut dx = Tensor::<T>::zeros(dy.shape());
    for i in 0..dy.len() {
        dx.data_mut()[i] = dy.data()[i] * mask.data()[i];
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_zero_train_is_identity_with_unit_mask() {
        let x = Tensor::<f64>::from_vec(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut rng = RngStream::new(1, 3);
        let (y, mask) = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn eval_is_identity_and_leaves_rng_alone() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut rng = RngStream::new(1, 3);
        let before = rng.counter();
        let (y, _) = dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert_eq!(rng.counter(), before);
    }

    #[test]
    fn train_statistics_at_p_02() {
        let x = Tensor::<f64>::filled(&[10000], 1.0);
        let mut rng = RngStream::new(7, 3);
        let (y, mask) = dropout(&x, 0.2, Mode::Train, &mut rng).unwrap();
        let kept = mask.iter().filter(|&&m| m != 0.0).count() as f64 / 10000.0;
        let mean: f64 = y.iter().sum::<f64>() / 10000.0;
        assert!((kept - 0.8).abs() < 0.02, "kept fraction {kept}");
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn expectation_preserved_elementwise() {
        // E[y_i] = x_i under inverted scaling; test via the sample mean of a
        // single repeated element across many draws.
        let x = Tensor::<f64>::filled(&[10000], 2.5);
        let mut rng = RngStream::new(11, 3);
        let (y, _) = dropout(&x, 0.35, Mode::Train, &mut rng).unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 10000.0;
        assert!((mean - 2.5).abs() < 0.125, "mean {mean}");
    }

    #[test]
    fn kept_entries_scale_by_inverse_keep_probability() {
        let x = Tensor::<f64>::filled(&[100], 1.0);
        let mut rng = RngStream::new(13, 3);
        let (y, mask) = dropout(&x, 0.25, Mode::Train, &mut rng).unwrap();
        for (yv, mv) in y.iter().zip(mask.iter()) {
            assert!(*mv == 0.0 || (*mv - 1.0 / 0.75).abs() < 1e-12);
            assert_eq!(*yv, *mv);
        }
    }

    #[test]
    fn p_at_or_above_one_is_rejected() {
        let x = Tensor::<f64>::filled(&[2], 1.0);
        let mut rng = RngStream::new(1, 3);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&x, 1.5, Mode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn grad_applies_same_mask() {
        let x = Tensor::<f64>::filled(&[50], 1.0);
        let mut rng = RngStream::new(17, 3);
        let (_, mask) = dropout(&x, 0.4, Mode::Train, &mut rng).unwrap();
        let dy = Tensor::<f64>::filled(&[50], 3.0);
        let dx = dropout_grad(&mask, &dy).unwrap();
        for (dv, mv) in dx.iter().zip(mask.iter()) {
            assert_eq!(*dv, 3.0 * *mv);
        }
    }

    #[test]
    fn same_stream_reproduces_mask() {
        let x = Tensor::<f64>::filled(&[64], 1.0);
        let mut a = RngStream::new(23, 3);
        let mut b = RngStream::new(23, 3);
        let (_, m1) = dropout(&x, 0.5, Mode::Train, &mut a).unwrap();
        let (_, m2) = dropout(&x, 0.5, Mode::Train, &mut b).unwrap();
        assert_eq!(m1, m2);
    }
}
