use std::fmt;
use std::io;
use std::path::PathBuf;

/// Crate-wide error type. Every failure mode a caller can hit is a distinct
/// variant so tests and the CLI can match on them.
#[derive(Debug)]
pub enum Error {
    /// A value that must be finite came out NaN or infinite.
    NonFinite { context: String },
    /// Tensor data length does not match the product of its extents.
    LengthMismatch { expected: usize, actual: usize },
    /// Shapes are inconsistent for the requested operation.
    ShapeMismatch { context: String },
    /// A convolution geometry does not produce positive integral output extents.
    InvalidGeometry { context: String },
    /// An argument is outside its allowed range (e.g. dropout p >= 1).
    InvalidArgument { context: String },
    /// Train-mode batch statistics are degenerate (single element per channel).
    DegenerateBatch { context: String },
    /// Filesystem failure, tagged with the path involved.
    Io { path: PathBuf, source: io::Error },
    /// Checkpoint file is structurally broken (bad magic, malformed manifest line).
    CheckpointCorrupt { path: PathBuf, detail: String },
    /// Checkpoint payload byte count disagrees with the manifest.
    CheckpointPayloadLength { path: PathBuf, expected: usize, actual: usize },
    /// Checkpoint tensor has a different dtype than the caller expects.
    CheckpointDtype { name: String, expected: &'static str, actual: String },
    /// Image file could not be read from disk.
    ImageUnreadable { path: PathBuf, detail: String },
    /// Image file is not in a supported format.
    ImageUnsupportedFormat { path: PathBuf, detail: String },
    /// Feature file is malformed; line numbers are 1-based.
    FeatureFileParse { path: PathBuf, line: usize, detail: String },
    /// Dataset directory contains no usable images.
    EmptyDataset { path: PathBuf },
    /// Statistics need at least two samples.
    TooFewSamples { n: usize },
    /// Matrix expected to be symmetric is not, beyond tolerance.
    Asymmetric { max_deviation: f64 },
    /// Iterative eigensolver failed to reach its stopping rule.
    NoConvergence { context: String },
    /// A model-level failure, tagged with the layer index it occurred at.
    Layer { index: usize, source: Box<Error> },
    /// Training aborted; the message names the offending sub-step.
    Training { context: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Self::LengthMismatch { expected, actual } => {
                write!(f, "data length mismatch: expected {expected}, got {actual}")
            }
            Self::ShapeMismatch { context } => write!(f, "shape mismatch: {context}"),
            Self::InvalidGeometry { context } => write!(f, "invalid geometry: {context}"),
            Self::InvalidArgument { context } => write!(f, "invalid argument: {context}"),
            Self::DegenerateBatch { context } => write!(f, "degenerate batch: {context}"),
            Self::Io { path, source } => write!(f, "io error at {}: {source}", path.display()),
            Self::CheckpointCorrupt { path, detail } => {
                write!(f, "corrupt checkpoint {}: {detail}", path.display())
            }
            Self::CheckpointPayloadLength {
                path,
                expected,
                actual,
            } => write!(
                f,
                "payload length mismatch in {}: manifest wants {expected} bytes, file has {actual}",
                path.display()
            ),
            Self::CheckpointDtype {
                name,
                expected,
                actual,
            } => write!(f, "dtype mismatch for tensor {name}: expected {expected}, stored {actual}"),
            Self::ImageUnreadable { path, detail } => {
                write!(f, "unreadable image {}: {detail}", path.display())
            }
            Self::ImageUnsupportedFormat { path, detail } => {
                write!(f, "unsupported format for {}: {detail}", path.display())
            }
            Self::FeatureFileParse { path, line, detail } => {
                write!(f, "feature file {} line {line}: {detail}", path.display())
            }
            Self::EmptyDataset { path } => {
                write!(f, "no images found under {}", path.display())
            }
            Self::TooFewSamples { n } => {
                write!(f, "need at least 2 samples for statistics, got {n}")
            }
            Self::Asymmetric { max_deviation } => {
                write!(f, "matrix not symmetric: max |A - A^T| = {max_deviation:e}")
            }
            Self::NoConvergence { context } => write!(f, "no convergence: {context}"),
            Self::Layer { index, source } => write!(f, "layer {index}: {source}"),
            Self::Training { context } => write!(f, "training aborted: {context}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io { source, .. } => Some(source),
            Self::Layer { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
