//! Convolution (cross-correlation, zero padding) and its transpose, built on
//! im2col plus the gemm kernels. The transpose is the literal adjoint of the
//! forward map with the same geometry, so ⟨convT(x), y⟩ = ⟨x, conv(y)⟩ holds
//! by construction rather than by a separate derivation.
//!
//! Weight layouts follow the usual convention: conv2d takes [F, C, k, k]
//! (out-channels first), convtranspose2d takes [C, F, k, k] (in-channels
//! first) so the same buffer serves both directions of the adjoint pair.

use crate::error::{Error, Result};
use crate::layers::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::layers::ConvGeometry;
use crate::tensor::{Scalar, Tensor};

/// Unrolls k×k patches of one image [channels, h, w] into a matrix
/// [channels·k², ho·wo]. Out-of-bounds taps read as zero. Overwrites `col`.
pub fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    assert_eq!(x.len(), channels * h * w, "im2col input size");
    assert_eq!(col.len(), channels * k * k * ho * wo, "im2col output size");
    let mut row = 0;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                // In-bounds output range along j: lo·s + kj - p >= 0 and
                // (hi-1)·s + kj - p <= w-1. Outside it every tap is padding.
                let (lo, hi) = tap_range(w, k, s, p, kj, wo);
                let dst_rows = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for i in 0..ho {
                    let src_i = (i * s + ki) as isize - p as isize;
                    let dst = &mut dst_rows[i * wo..(i + 1) * wo];
                    if src_i < 0 || src_i >= h as isize {
                        for v in dst.iter_mut() {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[src_i as usize * w..(src_i as usize + 1) * w];
                    for v in dst[..lo].iter_mut() {
                        *v = T::zero();
                    }
                    for v in dst[hi..].iter_mut() {
                        *v = T::zero();
                    }
                    if hi > lo {
                        let base = lo * s + kj - p;
                        if s == 1 {
                            dst[lo..hi].copy_from_slice(&src_row[base..base + (hi - lo)]);
                        } else {
                            let taps = src_row[base..].iter().step_by(s);
                            for (v, &sv) in dst[lo..hi].iter_mut().zip(taps) {
                                *v = sv;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Output positions j in [lo, hi) for which tap j·s + kj - p lands inside a
/// row of width w. Empty ranges come back as lo == hi.
fn tap_range(w: usize, _k: usize, s: usize, p: usize, kj: usize, wo: usize) -> (usize, usize) {
    let lo = ((p.saturating_sub(kj) + s - 1) / s).min(wo);
    let hi = match (w - 1 + p).checked_sub(kj) {
        Some(t) => ((t / s) + 1).min(wo),
        None => lo,
    };
    (lo, hi.max(lo))
}

/// Adjoint of im2col: scatters a [channels·k², ho·wo] matrix back onto an
/// image, accumulating where patches overlap. Adds into `x`.
pub fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    assert_eq!(x.len(), channels * h * w, "col2im output size");
    assert_eq!(col.len(), channels * k * k * ho * wo, "col2im input size");
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = tap_range(w, k, s, p, kj, wo);
                let src_rows = &col[row * ho * wo..(row + 1) * ho * wo];
                for i in 0..ho {
                    let dst_i = (i * s + ki) as isize - p as isize;
                    if dst_i < 0 || dst_i >= h as isize {
                        continue;
                    }
                    let dst_row =
                        &mut plane[dst_i as usize * w..(dst_i as usize + 1) * w];
                    let src = &src_rows[i * wo..(i + 1) * wo];
                    if hi > lo {
                        let base = lo * s + kj - p;
                        if s == 1 {
                            let dst = &mut dst_row[base..base + (hi - lo)];
                            for (d, &v) in dst.iter_mut().zip(&src[lo..hi]) {
                                *d = *d + v;
                            }
                        } else {
                            let taps = dst_row[base..].iter_mut().step_by(s);
                            for (d, &v) in taps.zip(&src[lo..hi]) {
                                *d = *d + v;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        other => Err(Error::ShapeMismatch {
            context: format!("{what} must be rank 4, got shape {other:?}"),
        }),
    }
}

fn check_conv_weights<T: Scalar>(
    w: &Tensor<T>,
    b: &Tensor<T>,
    first: usize,
    second: usize,
    bias_len: usize,
    geom: &ConvGeometry,
    what: &str,
) -> Result<()> {
    let want = [first, second, geom.kernel, geom.kernel];
    if w.shape() != want {
        return Err(Error::ShapeMismatch {
            context: format!(
                "{what} weight shape {:?} does not match geometry {want:?}",
                w.shape()
            ),
        });
    }
    if b.shape() != [bias_len] {
        return Err(Error::ShapeMismatch {
            context: format!(
                "{what} bias shape {:?}, expected [{bias_len}]",
                b.shape()
            ),
        });
    }
    Ok(())
}

/// Cross-correlation with zero padding: x [N,C,H,W] · w [F,C,k,k] + b [F]
/// → [N,F,H',W'] with H' = (H + 2p - k)/s + 1.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let (n, c, h, wid) = dims4(x, "conv2d input")?;
    if c != geom.in_channels {
        return Err(Error::ShapeMismatch {
            context: format!(
                "conv2d input has {c} channels, geometry expects {}",
                geom.in_channels
            ),
        });
    }
    let f = geom.out_channels;
    check_conv_weights(w, b, f, c, f, geom, "conv2d")?;
    let ho = geom.conv_extent(h)?;
    let wo = geom.conv_extent(wid)?;
    let k = geom.kernel;
    let (ck2, hw) = (c * k * k, ho * wo);

    let mut y = Tensor::<T>::zeros(&[n, f, ho, wo]);
    let mut col = vec![T::zero(); ck2 * hw];
    for i in 0..n {
        let x_n = &x.data()[i * c * h * wid..(i + 1) * c * h * wid];
        im2col(x_n, c, h, wid, k, geom.stride, geom.padding, ho, wo, &mut col);
        let y_n = &mut y.data_mut()[i * f * hw..(i + 1) * f * hw];
        for fi in 0..f {
            let bias = b.data()[fi];
            for v in y_n[fi * hw..(fi + 1) * hw].iter_mut() {
                *v = bias;
            }
        }
        gemm_nn(f, ck2, hw, w.data(), &col, y_n);
    }
    y.check_finite("conv2d output")?;
    Ok(y)
}

/// Gradients of sum(dy ⊙ conv2d(x, w, b)) with respect to x, w, and b.
pub fn conv2d_grads<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: &ConvGeometry,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, wid) = dims4(x, "conv2d_grads input")?;
    let f = geom.out_channels;
    let ho = geom.conv_extent(h)?;
    let wo = geom.conv_extent(wid)?;
    if dy.shape() != [n, f, ho, wo] {
        return Err(Error::ShapeMismatch {
            context: format!(
                "conv2d_grads cotangent shape {:?}, expected {:?}",
                dy.shape(),
                [n, f, ho, wo]
            ),
        });
    }
    let k = geom.kernel;
    if w.shape() != [f, c, k, k] {
        return Err(Error::ShapeMismatch {
            context: format!(
                "conv2d_grads weight shape {:?}, expected {:?}",
                w.shape(),
                [f, c, k, k]
            ),
        });
    }
    let (ck2, hw) = (c * k * k, ho * wo);

    let mut dx = Tensor::<T>::zeros(x.shape());
    let mut dw = Tensor::<T>::zeros(w.shape());
    let mut db = Tensor::<T>::zeros(&[f]);
    let mut col = vec![T::zero(); ck2 * hw];
    let mut dcol = vec![T::zero(); ck2 * hw];
    for i in 0..n {
        let x_n = &x.data()[i * c * h * wid..(i + 1) * c * h * wid];
        let dy_n = &dy.data()[i * f * hw..(i + 1) * f * hw];

        im2col(x_n, c, h, wid, k, geom.stride, geom.padding, ho, wo, &mut col);
        gemm_nt(f, hw, ck2, dy_n, &col, dw.data_mut());

        for fi in 0..f {
            let mut acc = T::zero();
            for &v in &dy_n[fi * hw..(fi + 1) * hw] {
                acc = acc + v;
            }
            db.data_mut()[fi] = db.data()[fi] + acc;
        }

        dcol.fill(T::zero());
        gemm_tn(ck2, f, hw, w.data(), dy_n, &mut dcol);
        let dx_n = &mut dx.data_mut()[i * c * h * wid..(i + 1) * c * h * wid];
        col2im(&dcol, c, h, wid, k, geom.stride, geom.padding, ho, wo, dx_n);
    }
    dx.check_finite("conv2d_grads dx")?;
    dw.check_finite("conv2d_grads dw")?;
    db.check_finite("conv2d_grads db")?;
    Ok((dx, dw, db))
}

/// Input gradient of conv2d alone, for backpropagating through a frozen
/// layer without paying for the weight and bias gradients.
pub fn conv2d_input_grad<T: Scalar>(
    w: &Tensor<T>,
    geom: &ConvGeometry,
    dy: &Tensor<T>,
    h: usize,
    wid: usize,
) -> Result<Tensor<T>> {
    let (n, f, ho, wo) = dims4(dy, "conv2d_input_grad cotangent")?;
    let c = geom.in_channels;
    let k = geom.kernel;
    if f != geom.out_channels || ho != geom.conv_extent(h)? || wo != geom.conv_extent(wid)? {
        return Err(Error::ShapeMismatch {
            context: format!(
                "conv2d_input_grad cotangent shape {:?} inconsistent with input {h}x{wid}",
                dy.shape()
            ),
        });
    }
    if w.shape() != [f, c, k, k] {
        return Err(Error::ShapeMismatch {
            context: format!(
                "conv2d_input_grad weight shape {:?}, expected {:?}",
                w.shape(),
                [f, c, k, k]
            ),
        });
    }
    let (ck2, hw) = (c * k * k, ho * wo);
    let mut dx = Tensor::<T>::zeros(&[n, c, h, wid]);
    let mut dcol = vec![T::zero(); ck2 * hw];
    for i in 0..n {
        let dy_n = &dy.data()[i * f * hw..(i + 1) * f * hw];
        dcol.fill(T::zero());
        gemm_tn(ck2, f, hw, w.data(), dy_n, &mut dcol);
        let dx_n = &mut dx.data_mut()[i * c * h * wid..(i + 1) * c * h * wid];
        col2im(&dcol, c, h, wid, k, geom.stride, geom.padding, ho, wo, dx_n);
    }
    dx.check_finite("conv2d_input_grad dx")?;
    Ok(dx)
}

/// Transposed convolution: x [N,C,H,W] · w [C,F,k,k] + b [F] → [N,F,H'',W'']
/// with H'' = (H - 1)·s - 2p + k. Adjoint of conv2d at the same geometry.
pub fn convtranspose2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let (n, c, h, wid) = dims4(x, "convtranspose2d input")?;
    if c != geom.in_channels {
        return Err(Error::ShapeMismatch {
            context: format!(
                "convtranspose2d input has {c} channels, geometry expects {}",
                geom.in_channels
            ),
        });
    }
    let f = geom.out_channels;
    check_conv_weights(w, b, c, f, f, geom, "convtranspose2d")?;
    let ho = geom.transposed_extent(h)?;
    let wo = geom.transposed_extent(wid)?;
    let k = geom.kernel;
    let (fk2, hw) = (f * k * k, h * wid);

    let mut y = Tensor::<T>::zeros(&[n, f, ho, wo]);
    let mut dcol = vec![T::zero(); fk2 * hw];
    for i in 0..n {
        let x_n = &x.data()[i * c * hw..(i + 1) * c * hw];
        dcol.fill(T::zero());
        gemm_tn(fk2, c, hw, w.data(), x_n, &mut dcol);
        let y_n = &mut y.data_mut()[i * f * ho * wo..(i + 1) * f * ho * wo];
        for fi in 0..f {
            let bias = b.data()[fi];
            for v in y_n[fi * ho * wo..(fi + 1) * ho * wo].iter_mut() {
                *v = bias;
            }
        }
        col2im(&dcol, f, ho, wo, k, geom.stride, geom.padding, h, wid, y_n);
    }
    y.check_finite("convtranspose2d output")?;
    Ok(y)
}

/// Gradients of sum(dy ⊙ convtranspose2d(x, w, b)). dx is exactly
/// conv2d(dy, w) at the same geometry, by adjointness.
pub fn convtranspose2d_grads<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: &ConvGeometry,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, wid) = dims4(x, "convtranspose2d_grads input")?;
    let f = geom.out_channels;
    let ho = geom.transposed_extent(h)?;
    let wo = geom.transposed_extent(wid)?;
    if dy.shape() != [n, f, ho, wo] {
        return Err(Error::ShapeMismatch {
            context: format!(
                "convtranspose2d_grads cotangent shape {:?}, expected {:?}",
                dy.shape(),
                [n, f, ho, wo]
            ),
        });
    }
    let k = geom.kernel;
    if w.shape() != [c, f, k, k] {
        return Err(Error::ShapeMismatch {
            context: format!(
                "convtranspose2d_grads weight shape {:?}, expected {:?}",
                w.shape(),
                [c, f, k, k]
            ),
        });
    }
    let (fk2, hw) = (f * k * k, h * wid);

    let mut dx = Tensor::<T>::zeros(x.shape());
    let mut dw = Tensor::<T>::zeros(w.shape());
    let mut db = Tensor::<T>::zeros(&[f]);
    let mut col_dy = vec![T::zero(); fk2 * hw];
    for i in 0..n {
        let x_n = &x.data()[i * c * hw..(i + 1) * c * hw];
        let dy_n = &dy.data()[i * f * ho * wo..(i + 1) * f * ho * wo];

        im2col(
            dy_n, f, ho, wo, k, geom.stride, geom.padding, h, wid, &mut col_dy,
        );
        let dx_n = &mut dx.data_mut()[i * c * hw..(i + 1) * c * hw];
        gemm_nn(c, fk2, hw, w.data(), &col_dy, dx_n);
        gemm_nt(c, hw, fk2, x_n, &col_dy, dw.data_mut());

        for fi in 0..f {
            let mut acc = T::zero();
            for &v in &dy_n[fi * ho * wo..(fi + 1) * ho * wo] {
                acc = acc + v;
            }
            db.data_mut()[fi] = db.data()[fi] + acc;
        }
    }
    dx.check_finite("convtranspose2d_grads dx")?;
    dw.check_finite("convtranspose2d_grads dw")?;
    db.check_finite("convtranspose2d_grads db")?;
    Ok((dx, dw, db))
}
