//! Fréchet distance between Gaussian summaries of two feature sets.
//!
//! The score compares real and generated images through a feature
//! embedding: fit a Gaussian (mean + covariance) to each feature set,
//! then compute
//!
//!   d² = ‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2 (Σ_r Σ_g)^{1/2})
//!
//! All statistics are computed in f64. The matrix square root of the
//! non-symmetric product Σ_r Σ_g is obtained through the symmetric
//! reduction Tr((Σ_r Σ_g)^{1/2}) = Tr(sqrtm(A Σ_g A)) with A = Σ_r^{1/2},
//! which only ever takes roots of symmetric PSD matrices.
//!
//! The default embedder is a frozen, seeded two-stage random convolution.
//! Scores from it are self-consistent across runs of this crate but are
//! NOT comparable to published scores computed with Inception features;
//! use feature files to bring in embeddings from an external network.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{activation, conv2d, Activation, ConvGeometry};
use crate::linalg::{matmul, sym_eig, trace, transpose};
use crate::rng::RngStream;
use crate::tensor::{randn, Scalar, Tensor};

/// Gaussian summary of a feature set: mean vector and covariance matrix.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    /// Mean, shape [d].
    pub mu: Tensor<f64>,
    /// Covariance, shape [d, d], symmetric.
    pub sigma: Tensor<f64>,
}

/// How to turn images into feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    /// Frozen random conv stages, weights derived from the seed.
    FixedRandomConv,
    /// Features come from a file; `embed_images` refuses this kind.
    ExternalFile,
}

/// Embedder configuration. Defaults to the seeded random conv embedder
/// with 64 output features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub seed: u64,
    pub output_dim: usize,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec {
            kind: EmbedderKind::FixedRandomConv,
            seed: 0,
            output_dim: 64,
        }
    }
}

/// Channel count of the hidden stage of the random conv embedder.
const EMBED_HIDDEN: usize = 32;
/// Images are processed in sub-batches of this size to bound the
/// activation memory of the embedding convolutions.
const EMBED_CHUNK: usize = 32;

/// Mean and unbiased covariance (divisor n−1) of `features` [n, d].
/// The returned covariance is exactly symmetric by construction.
pub fn gaussian_stats(features: &Tensor<f64>) -> Result<GaussianStats> {
    if features.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: format!(
                "gaussian_stats: expected [n, d] features, got {:?}",
                features.shape()
            ),
        });
    }
    let n = features.shape()[0];
    let d = features.shape()[1];
    if n < 2 {
        return Err(Error::TooFewSamples { n });
    }
    features.check_finite("gaussian_stats features")?;
    let x = features.data();
    let mut mu = vec![0.0; d];
    for row in 0..n {
        for j in 0..d {
            mu[j] += x[row * d + j];
        }
    }
    for v in &mut mu {
        *v /= n as f64;
    }
    let mut centered = vec![0.0; n * d];
    for row in 0..n {
        for j in 0..d {
            centered[row * d + j] = x[row * d + j] - mu[j];
        }
    }
    let mut sigma = vec![0.0; d * d];
    let denom = (n - 1) as f64;
    for j in 0..d {
        for k in j..d {
            let mut acc = 0.0;
            for row in 0..n {
                acc += centered[row * d + j] * centered[row * d + k];
            }
            let v = acc / denom;
            sigma[j * d + k] = v;
            sigma[k * d + j] = v;
        }
    }
    Ok(GaussianStats {
        mu: Tensor::from_vec(&[d], mu)?,
        sigma: Tensor::from_vec(&[d, d], sigma)?,
    })
}

/// Symmetric PSD square root: returns symmetric S with S·S ≈ A.
/// Negative eigenvalues (roundoff from near-singular covariances) are
/// clamped to zero before the root. Errors if A is not symmetric within
/// `1e-8 * max(1, max|a_ij|)`.
pub fn sqrtm_psd(a: &Tensor<f64>) -> Result<Tensor<f64>> {
    if a.shape().len() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::ShapeMismatch {
            context: format!("sqrtm_psd: expected a square matrix, got {:?}", a.shape()),
        });
    }
    let d = a.shape()[0];
    a.check_finite("sqrtm_psd input")?;
    let m = a.data();
    let mut max_abs: f64 = 0.0;
    let mut max_dev: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            max_abs = max_abs.max(m[i * d + j].abs());
            max_dev = max_dev.max((m[i * d + j] - m[j * d + i]).abs());
        }
    }
    if max_dev > 1e-8 * max_abs.max(1.0) {
        return Err(Error::Asymmetric {
            max_deviation: max_dev,
        });
    }
    let mut sym = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (m[i * d + j] + m[j * d + i]);
        }
    }
    let eig = sym_eig(&Tensor::from_vec(&[d, d], sym)?, 64)?;
    // Columns of V scaled by sqrt(max(lambda, 0)), then times V^T.
    let mut scaled = eig.vectors.clone();
    for j in 0..d {
        let root = eig.values[j].max(0.0).sqrt();
        for i in 0..d {
            scaled.data_mut()[i * d + j] *= root;
        }
    }
    let vt = transpose(&eig.vectors)?;
    let mut s = matmul(&scaled, &vt)?;
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (s.data()[i * d + j] + s.data()[j * d + i]);
            s.data_mut()[i * d + j] = v;
            s.data_mut()[j * d + i] = v;
        }
    }
    Ok(s)
}

/// Squared Fréchet distance between two Gaussian summaries, clamped to ≥ 0.
pub fn frechet_distance(r: &GaussianStats, g: &GaussianStats) -> Result<f64> {
    let d = r.mu.len();
    if g.mu.len() != d
        || r.sigma.shape() != [d, d]
        || g.sigma.shape() != [d, d]
    {
        return Err(Error::ShapeMismatch {
            context: format!(
                "frechet_distance: mu lengths {} vs {}, sigma shapes {:?} vs {:?}",
                r.mu.len(),
                g.mu.len(),
                r.sigma.shape(),
                g.sigma.shape()
            ),
        });
    }
    let a = sqrtm_psd(&r.sigma)?;
    let mut inner = matmul(&matmul(&a, &g.sigma)?, &a)?;
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (inner.data()[i * d + j] + inner.data()[j * d + i]);
            inner.data_mut()[i * d + j] = v;
            inner.data_mut()[j * d + i] = v;
        }
    }
    let tr_term = trace(&sqrtm_psd(&inner)?)?;
    let mut mean_sq = 0.0;
    for (&mr, &mg) in r.mu.data().iter().zip(g.mu.data()) {
        let diff = mr - mg;
        mean_sq += diff * diff;
    }
    let fid = mean_sq + trace(&r.sigma)? + trace(&g.sigma)? - 2.0 * tr_term;
    if !fid.is_finite() {
        return Err(Error::NonFinite {
            context: "frechet_distance result".to_string(),
        });
    }
    Ok(fid.max(0.0))
}

struct EmbedderWeights {
    w1: Tensor<f64>,
    b1: Tensor<f64>,
    w2: Tensor<f64>,
    b2: Tensor<f64>,
    geom1: ConvGeometry,
    geom2: ConvGeometry,
}

fn embedder_weights(spec: &EmbedderSpec) -> Result<EmbedderWeights> {
    if spec.output_dim == 0 {
        return Err(Error::InvalidArgument {
            context: "embedder output_dim must be at least 1".to_string(),
        });
    }
    let mut rng = RngStream::new(spec.seed, 0);
    let mut w1: Tensor<f64> = randn(&[EMBED_HIDDEN, 3, 4, 4], &mut rng);
    let std1 = (2.0_f64 / (3.0 * 16.0)).sqrt();
    for v in w1.data_mut() {
        *v *= std1;
    }
    let mut w2: Tensor<f64> = randn(&[spec.output_dim, EMBED_HIDDEN, 4, 4], &mut rng);
    let std2 = (2.0 / (EMBED_HIDDEN as f64 * 16.0)).sqrt();
    for v in w2.data_mut() {
        *v *= std2;
    }
    Ok(EmbedderWeights {
        w1,
        b1: Tensor::zeros(&[EMBED_HIDDEN]),
        w2,
        b2: Tensor::zeros(&[spec.output_dim]),
        geom1: ConvGeometry::new(4, 2, 1, 3, EMBED_HIDDEN)?,
        geom2: ConvGeometry::new(4, 2, 1, EMBED_HIDDEN, spec.output_dim)?,
    })
}

/// Embed a batch of images [n, 3, H, W] in [−1, 1] into feature rows
/// [n, output_dim]: two frozen seeded conv + LeakyReLU(0.2) stages with
/// stride 2, then a global average pool. Deterministic given the seed.
pub fn embed_images<T: Scalar>(images: &Tensor<T>, spec: &EmbedderSpec) -> Result<Tensor<f64>> {
    if spec.kind == EmbedderKind::ExternalFile {
        return Err(Error::InvalidArgument {
            context: "embedder kind external-file carries no network; read the features \
                      with load_features instead"
                .to_string(),
        });
    }
    if images.shape().len() != 4 || images.shape()[1] != 3 {
        return Err(Error::ShapeMismatch {
            context: format!(
                "embed_images: expected [n, 3, H, W] images, got {:?}",
                images.shape()
            ),
        });
    }
    images.check_finite("embed_images input")?;
    for &v in images.data() {
        let f = v.as_f64();
        if f.abs() > 1.0 + 1e-6 {
            return Err(Error::InvalidArgument {
                context: format!("embed_images: pixel value {f} outside [-1, 1]"),
            });
        }
    }
    let n = images.shape()[0];
    let (h, w) = (images.shape()[2], images.shape()[3]);
    let weights = embedder_weights(spec)?;
    let mut features = vec![0.0; n * spec.output_dim];
    let sample_len = 3 * h * w;
    let mut start = 0;
    while start < n {
        let count = EMBED_CHUNK.min(n - start);
        let chunk = Tensor::from_vec(
            &[count, 3, h, w],
            images.data()[start * sample_len..(start + count) * sample_len]
                .iter()
                .map(|&v| v.as_f64())
                .collect(),
        )?;
        let y1 = conv2d(&chunk, &weights.w1, &weights.b1, &weights.geom1)?;
        let y1 = activation(&y1, Activation::LeakyRelu(0.2));
        let y2 = conv2d(&y1, &weights.w2, &weights.b2, &weights.geom2)?;
        let y2 = activation(&y2, Activation::LeakyRelu(0.2));
        let spatial = y2.shape()[2] * y2.shape()[3];
        for i in 0..count {
            for ch in 0..spec.output_dim {
                let base = (i * spec.output_dim + ch) * spatial;
                let mut acc = 0.0;
                for &v in &y2.data()[base..base + spatial] {
                    acc += v;
                }
                features[(start + i) * spec.output_dim + ch] = acc / spatial as f64;
            }
        }
        start += count;
    }
    Tensor::from_vec(&[n, spec.output_dim], features)
}

/// Read a feature matrix from the text format: first line `n d`, then
/// n lines of d space-separated floats. Errors carry 1-based line numbers.
pub fn load_features(path: &Path) -> Result<Tensor<f64>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, detail: String| Error::FeatureFileParse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing `n d` header".to_string()))?;
    let mut parts = header.split_whitespace();
    let n: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad row count in header {header:?}")))?;
    let d: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad column count in header {header:?}")))?;
    if parts.next().is_some() {
        return Err(parse_err(1, format!("trailing data in header {header:?}")));
    }
    let mut data = Vec::with_capacity(n * d);
    for row in 0..n {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| parse_err(row + 2, format!("file ends after {row} of {n} rows")))?;
        let mut count = 0;
        for token in line.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| {
                parse_err(idx + 1, format!("bad float {token:?} in column {}", count + 1))
            })?;
            data.push(v);
            count += 1;
        }
        if count != d {
            return Err(parse_err(
                idx + 1,
                format!("expected {d} values, found {count}"),
            ));
        }
    }
    for (idx, line) in lines {
        if !line.trim().is_empty() {
            return Err(parse_err(idx + 1, format!("trailing data {line:?}")));
        }
    }
    Tensor::from_vec(&[n, d], data)
}

/// Write a feature matrix in the format read by `load_features`, with
/// enough digits that loading reproduces the values bit for bit.
pub fn save_features(path: &Path, features: &Tensor<f64>) -> Result<()> {
    if features.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: format!(
                "save_features: expected [n, d] features, got {:?}",
                features.shape()
            ),
        });
    }
    features.check_finite("save_features features")?;
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let io_err = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::with_capacity(n * d * 26 + 16);
    writeln!(out, "{n} {d}").map_err(io_err)?;
    for row in 0..n {
        for j in 0..d {
            if j > 0 {
                out.push(b' ');
            }
            write!(out, "{:.17e}", features.data()[row * d + j]).map_err(io_err)?;
        }
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err)
}
