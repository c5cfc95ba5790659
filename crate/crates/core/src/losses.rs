//! The four training objectives, each as a scalar loss plus its exact
//! gradient with respect to the score inputs. Both "ascent" objectives are
//! realized as descent on the negation so one optimizer path serves all
//! regimes. Loss values accumulate in f64 whatever the working dtype.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before any log.
pub const PROB_EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.max(PROB_EPS).min(1.0 - PROB_EPS)
}

fn mean_over<T: Scalar>(t: &Tensor<T>, what: &str, f: impl Fn(f64) -> f64) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::InvalidArgument {
            context: format!("{what} over an empty score tensor"),
        });
    }
    let mut acc = 0.0f64;
    for &v in t.data() {
        acc += f(v.as_f64());
    }
    Ok(acc / t.len() as f64)
}

/// -mean(log D(x)) - mean(log(1 - D(G(z)))): descent form of maximizing
/// log D(x) + log(1 - D(G(z))).
pub fn dcgan_d_loss<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    let real = mean_over(d_real, "dcgan_d_loss", |p| clamp_prob(p).ln())?;
    let fake = mean_over(d_fake, "dcgan_d_loss", |p| (1.0 - clamp_prob(p)).ln())?;
    Ok(-real - fake)
}

/// Gradients of dcgan_d_loss w.r.t. (d_real, d_fake). Entries pushed outside
/// the clamp window get zero gradient, matching the clamped forward.
pub fn dcgan_d_loss_grads<T: Scalar>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::InvalidArgument {
            context: "dcgan_d_loss_grads over an empty score tensor".to_string(),
        });
    }
    let n = d_real.len() as f64;
    let m = d_fake.len() as f64;
    let mut dr = Tensor::<T>::zeros(d_real.shape());
    for (i, &v) in d_real.data().iter().enumerate() {
        let p = v.as_f64();
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            dr.data_mut()[i] = T::from_f64(-1.0 / (n * p));
        }
    }
    let mut df = Tensor::<T>::zeros(d_fake.shape());
    for (i, &v) in d_fake.data().iter().enumerate() {
        let p = v.as_f64();
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            df.data_mut()[i] = T::from_f64(1.0 / (m * (1.0 - p)));
        }
    }
    Ok((dr, df))
}

/// -mean(log D(G(z))): the non-saturating generator objective.
pub fn dcgan_g_loss<T: Scalar>(d_fake: &Tensor<T>) -> Result<f64> {
    let fake = mean_over(d_fake, "dcgan_g_loss", |p| clamp_prob(p).ln())?;
    Ok(-fake)
}

pub fn dcgan_g_loss_grad<T: Scalar>(d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    if d_fake.is_empty() {
        return Err(Error::InvalidArgument {
            context: "dcgan_g_loss_grad over an empty score tensor".to_string(),
        });
    }
    let m = d_fake.len() as f64;
    let mut df = Tensor::<T>::zeros(d_fake.shape());
    for (i, &v) in d_fake.data().iter().enumerate() {
        let p = v.as_f64();
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            df.data_mut()[i] = T::from_f64(-1.0 / (m * p));
        }
    }
    Ok(df)
}

/// -(mean f(x) - mean f(G(z))): descent form of the critic objective.
/// Scores are unbounded; no clamping.
pub fn wgan_critic_loss<T: Scalar>(f_real: &Tensor<T>, f_fake: &Tensor<T>) -> Result<f64> {
    let real = mean_over(f_real, "wgan_critic_loss", |v| v)?;
    let fake = mean_over(f_fake, "wgan_critic_loss", |v| v)?;
    Ok(fake - real)
}

pub fn wgan_critic_loss_grads<T: Scalar>(
    f_real: &Tensor<T>,
    f_fake: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if f_real.is_empty() || f_fake.is_empty() {
        return Err(Error::InvalidArgument {
            context: "wgan_critic_loss_grads over an empty score tensor".to_string(),
        });
    }
    let dr = Tensor::filled(f_real.shape(), T::from_f64(-1.0 / f_real.len() as f64));
    let df = Tensor::filled(f_fake.shape(), T::from_f64(1.0 / f_fake.len() as f64));
    Ok((dr, df))
}

/// -mean f(G(z)): descent form of maximizing the critic's score on fakes.
pub fn wgan_g_loss<T: Scalar>(f_fake: &Tensor<T>) -> Result<f64> {
    Ok(-mean_over(f_fake, "wgan_g_loss", |v| v)?)
}

pub fn wgan_g_loss_grad<T: Scalar>(f_fake: &Tensor<T>) -> Result<Tensor<T>> {
    if f_fake.is_empty() {
        return Err(Error::InvalidArgument {
            context: "wgan_g_loss_grad over an empty score tensor".to_string(),
        });
    }
    Ok(Tensor::filled(
        f_fake.shape(),
        T::from_f64(-1.0 / f_fake.len() as f64),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finitediff::{finite_diff_grad, max_rel_err};
    use crate::rng::RngStream;
    use crate::tensor::randn;

    fn scores(n: usize, seed: u64) -> Tensor<f64> {
        // Probabilities well inside the clamp window so finite differences
        // see a smooth function.
        let mut rng = RngStream::new(seed, 0);
        let mut t = Tensor::<f64>::zeros(&[n]);
        for i in 0..n {
            t.data_mut()[i] = 0.1 + 0.8 * rng.next_f64();
        }
        t
    }

    #[test]
    fn dcgan_d_analytic_values() {
        let one = Tensor::<f64>::filled(&[1], 1.0);
        let zero = Tensor::<f64>::filled(&[1], 0.0);
        let half = Tensor::<f64>::filled(&[1], 0.5);

        let perfect = dcgan_d_loss(&one, &zero).unwrap();
        assert!(perfect.abs() < 1e-6, "perfect discriminator loss {perfect}");

        let blind = dcgan_d_loss(&half, &half).unwrap();
        assert!((blind - 2.0 * std::f64::consts::LN_2).abs() < 1e-9);

        let inverted = dcgan_d_loss(&zero, &one).unwrap();
        assert!((inverted - (-2.0 * PROB_EPS.ln())).abs() < 1e-9);
        assert!((inverted - 32.236).abs() < 0.01);
    }

    #[test]
    fn dcgan_g_analytic_values() {
        let one = Tensor::<f64>::filled(&[1], 1.0);
        assert!(dcgan_g_loss(&one).unwrap().abs() < 1e-6);

        let half = Tensor::<f64>::filled(&[1], 0.5);
        assert!((dcgan_g_loss(&half).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);

        let quarter = Tensor::<f64>::filled(&[2], 0.25);
        assert!((dcgan_g_loss(&quarter).unwrap() - 4.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn wgan_critic_analytic_values() {
        let mut rng = RngStream::new(3, 0);
        let f = randn::<f64>(&[8], &mut rng);
        assert!(wgan_critic_loss(&f, &f).unwrap().abs() < 1e-12);

        let real = Tensor::<f64>::from_vec(&[2], vec![1.5, 2.5]).unwrap();
        let fake = Tensor::<f64>::from_vec(&[2], vec![0.5, 1.5]).unwrap();
        assert!((wgan_critic_loss(&real, &fake).unwrap() + 1.0).abs() < 1e-12);

        // Invariant under a common additive shift.
        let shift = |t: &Tensor<f64>, k: f64| t.map(|v| v + k);
        let base = wgan_critic_loss(&real, &fake).unwrap();
        let moved = wgan_critic_loss(&shift(&real, 17.25), &shift(&fake, 17.25)).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn wgan_g_analytic_values() {
        let zeros = Tensor::<f64>::zeros(&[4]);
        assert_eq!(wgan_g_loss(&zeros).unwrap(), 0.0);

        let f = Tensor::<f64>::from_vec(&[2], vec![1.0, 3.0]).unwrap();
        assert!((wgan_g_loss(&f).unwrap() + 2.0).abs() < 1e-12);

        // Linear in the scores.
        let scaled = f.map(|v| 3.5 * v);
        assert!((wgan_g_loss(&scaled).unwrap() - 3.5 * wgan_g_loss(&f).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let real = scores(5, 101);
        let fake = scores(7, 102);

        let (dr, df) = dcgan_d_loss_grads(&real, &fake).unwrap();
        let mut f_r = |t: &Tensor<f64>| dcgan_d_loss(t, &fake);
        let num = finite_diff_grad(&mut f_r, &real, 1e-7).unwrap();
        assert!(max_rel_err(dr.data(), num.data()) < 1e-6);
        let mut f_f = |t: &Tensor<f64>| dcgan_d_loss(&real, t);
        let num = finite_diff_grad(&mut f_f, &fake, 1e-7).unwrap();
        assert!(max_rel_err(df.data(), num.data()) < 1e-6);

        let dg = dcgan_g_loss_grad(&fake).unwrap();
        let mut f_g = |t: &Tensor<f64>| dcgan_g_loss(t);
        let num = finite_diff_grad(&mut f_g, &fake, 1e-7).unwrap();
        assert!(max_rel_err(dg.data(), num.data()) < 1e-6);

        let mut rng = RngStream::new(103, 0);
        let w_real = randn::<f64>(&[6], &mut rng);
        let w_fake = randn::<f64>(&[4], &mut rng);
        let (dwr, dwf) = wgan_critic_loss_grads(&w_real, &w_fake).unwrap();
        let mut f_wr = |t: &Tensor<f64>| wgan_critic_loss(t, &w_fake);
        let num = finite_diff_grad(&mut f_wr, &w_real, 1e-6).unwrap();
        assert!(max_rel_err(dwr.data(), num.data()) < 1e-6);
        let mut f_wf = |t: &Tensor<f64>| wgan_critic_loss(&w_real, t);
        let num = finite_diff_grad(&mut f_wf, &w_fake, 1e-6).unwrap();
        assert!(max_rel_err(dwf.data(), num.data()) < 1e-6);

        let dwg = wgan_g_loss_grad(&w_fake).unwrap();
        let mut f_wg = |t: &Tensor<f64>| wgan_g_loss(t);
        let num = finite_diff_grad(&mut f_wg, &w_fake, 1e-6).unwrap();
        assert!(max_rel_err(dwg.data(), num.data()) < 1e-6);
    }

    #[test]
    fn clamp_zeroes_gradient_outside_window() {
        let edge = Tensor::<f64>::from_vec(&[3], vec![0.0, 0.5, 1.0]).unwrap();
        let dg = dcgan_g_loss_grad(&edge).unwrap();
        assert_eq!(dg.data()[0], 0.0);
        assert!(dg.data()[1] != 0.0);
        assert_eq!(dg.data()[2], 0.0);
    }

    #[test]
    fn critic_gradient_direction_invariant_under_positive_scaling() {
        let mut rng = RngStream::new(104, 0);
        let real = randn::<f64>(&[5], &mut rng);
        let fake = randn::<f64>(&[5], &mut rng);
        let (dr1, df1) = wgan_critic_loss_grads(&real, &fake).unwrap();
        let (dr2, df2) =
            wgan_critic_loss_grads(&real.map(|v| 4.0 * v), &fake.map(|v| 4.0 * v)).unwrap();
        assert_eq!(dr1, dr2);
        assert_eq!(df1, df2);
    }

    #[test]
    fn empty_scores_are_rejected() {
        let empty = Tensor::<f64>::zeros(&[0]);
        let some = Tensor::<f64>::filled(&[1], 0.5);
        assert!(dcgan_d_loss(&empty, &some).is_err());
        assert!(dcgan_g_loss(&empty).is_err());
        assert!(wgan_critic_loss(&some, &empty).is_err());
        assert!(wgan_g_loss(&empty).is_err());
    }
}
