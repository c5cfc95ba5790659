//! Row-major matrix multiply kernels backing im2col convolution. No blocking
//! or threading: the axpy inner loops run over contiguous slices so the
//! compiler can vectorize them, which is all the single-core budget needs.
//! Summation order is fixed, which keeps training bitwise reproducible.

use crate::tensor::Scalar;

/// c[m x n] += a[m x k] · b[k x n]. Four b-rows per pass amortize the c-row
/// traffic; each output element still accumulates in ascending l order, so
/// the results match the plain axpy loop bit for bit.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * k, "gemm_nn lhs size");
    assert_eq!(b.len(), k * n, "gemm_nn rhs size");
    assert_eq!(c.len(), m * n, "gemm_nn out size");
    let k4 = k - k % 4;
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        let mut l = 0;
        while l < k4 {
            let (a0, a1, a2, a3) = (a_row[l], a_row[l + 1], a_row[l + 2], a_row[l + 3]);
            let b0 = &b[l * n..(l + 1) * n];
            let b1 = &b[(l + 1) * n..(l + 2) * n];
            let b2 = &b[(l + 2) * n..(l + 3) * n];
            let b3 = &b[(l + 3) * n..(l + 4) * n];
            for ((((cv, &v0), &v1), &v2), &v3) in
                c_row.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3)
            {
                let mut v = v0.mul_add(a0, *cv);
                v = v1.mul_add(a1, v);
                v = v2.mul_add(a2, v);
                v = v3.mul_add(a3, v);
                *cv = v;
            }
            l += 4;
        }
        for (l, &a_il) in a_row.iter().enumerate().skip(k4) {
            let b_row = &b[l * n..(l + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = bv.mul_add(a_il, *cv);
            }
        }
    }
}

/// c[m x n] += aᵀ · b where a is stored [k x m]. Blocked over l like gemm_nn,
/// and likewise bit-identical to the unblocked loop.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), k * m, "gemm_tn lhs size");
    assert_eq!(b.len(), k * n, "gemm_tn rhs size");
    assert_eq!(c.len(), m * n, "gemm_tn out size");
    let k4 = k - k % 4;
    let mut l = 0;
    while l < k4 {
        let a0 = &a[l * m..(l + 1) * m];
        let a1 = &a[(l + 1) * m..(l + 2) * m];
        let a2 = &a[(l + 2) * m..(l + 3) * m];
        let a3 = &a[(l + 3) * m..(l + 4) * m];
        let b0 = &b[l * n..(l + 1) * n];
        let b1 = &b[(l + 1) * n..(l + 2) * n];
        let b2 = &b[(l + 2) * n..(l + 3) * n];
        let b3 = &b[(l + 3) * n..(l + 4) * n];
        for i in 0..m {
            let c_row = &mut c[i * n..(i + 1) * n];
            let (s0, s1, s2, s3) = (a0[i], a1[i], a2[i], a3[i]);
            for ((((cv, &v0), &v1), &v2), &v3) in
                c_row.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3)
            {
                let mut v = v0.mul_add(s0, *cv);
                v = v1.mul_add(s1, v);
                v = v2.mul_add(s2, v);
                v = v3.mul_add(s3, v);
                *cv = v;
            }
        }
        l += 4;
    }
    while l < k {
        let a_row = &a[l * m..(l + 1) * m];
        let b_row = &b[l * n..(l + 1) * n];
        for (i, &a_li) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = bv.mul_add(a_li, *cv);
            }
        }
        l += 1;
    }
}

/// c[m x n] += a · bᵀ where b is stored [n x k]. The reduction runs along k;
/// four independent accumulators break the FMA dependency chain.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * k, "gemm_nt lhs size");
    assert_eq!(b.len(), n * k, "gemm_nt rhs size");
    assert_eq!(c.len(), m * n, "gemm_nt out size");
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = [T::zero(); 4];
            let mut chunks_a = a_row.chunks_exact(4);
            let mut chunks_b = b_row.chunks_exact(4);
            for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
                for lane in 0..4 {
                    acc[lane] = ca[lane].mul_add(cb[lane], acc[lane]);
                }
            }
            for (&av, &bv) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
                acc[0] = av.mul_add(bv, acc[0]);
            }
            let dot = ((acc[0] + acc[1]) + acc[2]) + acc[3];
            c[i * n + j] = c[i * n + j] + dot;
        }
    }
}
