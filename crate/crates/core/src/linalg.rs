//! Dense symmetric eigendecomposition and small f64 matrix helpers.
//!
//! The distance metric needs matrix square roots of covariance matrices,
//! which reduce to an eigendecomposition of a symmetric matrix. A cyclic
//! Jacobi sweep is plenty for the dimensions involved (tens of features)
//! and is simple enough to trust.

use crate::error::{Error, Result};
use crate::layers::gemm_nn;
use crate::tensor::Tensor;

/// Eigendecomposition of a symmetric matrix: `a == vectors * diag(values) * vectors^T`.
/// Column `j` of `vectors` is the unit eigenvector for `values[j]`.
/// Eigenvalues are sorted ascending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Tensor<f64>,
}

fn square_dim(a: &Tensor<f64>, context: &str) -> Result<usize> {
    if a.shape().len() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::ShapeMismatch {
            context: format!("{context}: expected a square matrix, got {:?}", a.shape()),
        });
    }
    Ok(a.shape()[0])
}

/// Frobenius norm of the off-diagonal part.
fn off_diagonal_norm(a: &[f64], d: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                sum += a[i * d + j] * a[i * d + j];
            }
        }
    }
    sum.sqrt()
}

fn frobenius_norm(a: &[f64]) -> f64 {
    a.iter().map(|&v| v * v).sum::<f64>().sqrt()
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Only the values are read as given; the iteration keeps the working copy
/// exactly symmetric. Stops once the off-diagonal Frobenius norm drops
/// below `1e-12 * max(1, ||a||_F)`, errors with `NoConvergence` if that
/// does not happen within `max_sweeps` full sweeps.
pub fn sym_eig(a: &Tensor<f64>, max_sweeps: usize) -> Result<SymEig> {
    let d = square_dim(a, "sym_eig")?;
    a.check_finite("sym_eig input")?;
    let mut m = a.data().to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let tol = 1e-12 * frobenius_norm(&m).max(1.0);
    let mut converged = off_diagonal_norm(&m, d) <= tol;
    let mut sweeps = 0;
    while !converged && sweeps < max_sweeps {
        for p in 0..d.saturating_sub(1) {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..d {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = m[i * d + p];
                    let aiq = m[i * d + q];
                    let new_p = c * aip - s * aiq;
                    let new_q = s * aip + c * aiq;
                    m[i * d + p] = new_p;
                    m[p * d + i] = new_p;
                    m[i * d + q] = new_q;
                    m[q * d + i] = new_q;
                }
                m[p * d + p] = app - t * apq;
                m[q * d + q] = aqq + t * apq;
                m[p * d + q] = 0.0;
                m[q * d + p] = 0.0;
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&m, d) <= tol;
    }
    if !converged {
        return Err(Error::NoConvergence {
            context: format!("jacobi eigensolver did not converge in {max_sweeps} sweeps (d = {d})"),
        });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[i * d + i].partial_cmp(&m[j * d + j]).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&j| m[j * d + j]).collect();
    let mut vectors = vec![0.0; d * d];
    for (col, &j) in order.iter().enumerate() {
        for i in 0..d {
            vectors[i * d + col] = v[i * d + j];
        }
    }
    Ok(SymEig {
        values,
        vectors: Tensor::from_vec(&[d, d], vectors)?,
    })
}

/// `a * b` for 2-d f64 tensors.
pub fn matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            context: format!("matmul: {:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = Tensor::zeros(&[m, n]);
    gemm_nn(m, k, n, a.data(), b.data(), c.data_mut());
    Ok(c)
}

/// Transpose of a 2-d f64 tensor.
pub fn transpose(a: &Tensor<f64>) -> Result<Tensor<f64>> {
    if a.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: format!("transpose: expected 2-d, got {:?}", a.shape()),
        });
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            out.data_mut()[j * m + i] = a.data()[i * n + j];
        }
    }
    Ok(out)
}

/// Sum of the diagonal of a square matrix.
pub fn trace(a: &Tensor<f64>) -> Result<f64> {
    let d = square_dim(a, "trace")?;
    Ok((0..d).map(|i| a.data()[i * d + i]).sum())
}

/// The `d x d` identity matrix.
pub fn identity(d: usize) -> Tensor<f64> {
    let mut m = Tensor::zeros(&[d, d]);
    for i in 0..d {
        m.data_mut()[i * d + i] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tensor::randn;

    fn random_symmetric(d: usize, seed: u64) -> Tensor<f64> {
        let mut rng = RngStream::new(seed, 0);
        let b: Tensor<f64> = randn(&[d, d], &mut rng);
        let bt = transpose(&b).unwrap();
        let mut a = matmul(&b, &bt).unwrap();
        for v in a.data_mut() {
            *v /= d as f64;
        }
        a
    }

    fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_eig_is_trivial() {
        let eig = sym_eig(&identity(4), 8).unwrap();
        for &v in &eig.values {
            assert_eq!(v, 1.0);
        }
        assert_eq!(eig.vectors.data(), identity(4).data());
    }

    #[test]
    fn diagonal_matrix_sorted_eigenvalues() {
        let mut a = Tensor::zeros(&[3, 3]);
        a.data_mut()[0] = 3.0;
        a.data_mut()[4] = 1.0;
        a.data_mut()[8] = 2.0;
        let eig = sym_eig(&a, 8).unwrap();
        assert_eq!(eig.values, vec![1.0, 2.0, 3.0]);
        // Columns are the matching standard basis vectors.
        let v = eig.vectors.data();
        assert_eq!(v[1 * 3 + 0].abs(), 1.0);
        assert_eq!(v[2 * 3 + 1].abs(), 1.0);
        assert_eq!(v[0 * 3 + 2].abs(), 1.0);
    }

    #[test]
    fn two_by_two_analytic() {
        let a = Tensor::from_vec(&[2, 2], vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let eig = sym_eig(&a, 16).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        for &(d, seed) in &[(2usize, 11u64), (5, 12), (16, 13), (32, 14)] {
            let a = random_symmetric(d, seed);
            let eig = sym_eig(&a, 64).unwrap();
            let v = &eig.vectors;
            let vt = transpose(v).unwrap();
            // V^T V == I
            let gram = matmul(&vt, v).unwrap();
            assert!(
                max_abs_diff(&gram, &identity(d)) < 1e-12,
                "eigenvectors not orthonormal at d = {d}"
            );
            // V diag(lambda) V^T == A
            let mut vl = v.clone();
            for i in 0..d {
                for j in 0..d {
                    vl.data_mut()[i * d + j] *= eig.values[j];
                }
            }
            let rebuilt = matmul(&vl, &vt).unwrap();
            assert!(
                max_abs_diff(&rebuilt, &a) < 1e-10,
                "reconstruction off at d = {d}: {}",
                max_abs_diff(&rebuilt, &a)
            );
        }
    }

    #[test]
    fn eigenvalues_of_gram_matrix_are_nonnegative() {
        let a = random_symmetric(12, 77);
        let eig = sym_eig(&a, 64).unwrap();
        for &v in &eig.values {
            assert!(v > -1e-12, "gram matrix eigenvalue {v} below zero");
        }
    }

    #[test]
    fn non_square_rejected() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(sym_eig(&a, 8), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(trace(&a), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_sweeps_on_coupled_matrix_reports_no_convergence() {
        let a = Tensor::from_vec(&[2, 2], vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!(matches!(sym_eig(&a, 0), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn one_by_one_matrix() {
        let a = Tensor::from_vec(&[1, 1], vec![5.5]).unwrap();
        let eig = sym_eig(&a, 4).unwrap();
        assert_eq!(eig.values, vec![5.5]);
        assert_eq!(eig.vectors.data(), &[1.0]);
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = random_symmetric(6, 5);
        let tt = transpose(&transpose(&a).unwrap()).unwrap();
        assert_eq!(a.data(), tt.data());
    }
}
