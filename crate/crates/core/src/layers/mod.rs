//! Forward and backward passes for every layer the architectures need:
//! convolution, transposed convolution, batch normalization, dropout, and
//! elementwise activations. All functions are pure; dropout takes its
//! RngStream explicitly.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod gemm;

pub use activation::{activation, activation_grad, Activation};
pub use batchnorm::{batchnorm2d, batchnorm2d_grads, BatchNormState};
pub use conv::{
    col2im, conv2d, conv2d_grads, conv2d_input_grad, convtranspose2d, convtranspose2d_grads,
    im2col,
};
pub use dropout::{dropout, dropout_grad};
pub use gemm::{gemm_nn, gemm_nt, gemm_tn};

use crate::error::{Error, Result};

/// Whether stochastic layers (dropout) and batch statistics are live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Square-kernel convolution geometry shared by conv2d and its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    pub fn new(
        kernel: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<ConvGeometry> {
        if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidGeometry {
                context: format!(
                    "kernel {kernel}, stride {stride}, channels {in_channels}->{out_channels}: \
                     kernel, stride, and channel counts must be at least 1"
                ),
            });
        }
        Ok(ConvGeometry {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        })
    }

    /// Output extent of a convolution over an input extent: (H + 2p - k)/s + 1.
    /// The division must be exact and the result positive.
    pub fn conv_extent(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::InvalidGeometry {
                context: format!(
                    "kernel {} exceeds padded extent {padded}",
                    self.kernel
                ),
            });
        }
        let span = padded - self.kernel;
        if span % self.stride != 0 {
            return Err(Error::InvalidGeometry {
                context: format!(
                    "extent {input} with kernel {}, stride {}, padding {} \
                     gives a non-integral output extent",
                    self.kernel, self.stride, self.padding
                ),
            });
        }
        Ok(span / self.stride + 1)
    }

    /// Output extent of a transposed convolution: (H - 1)·s - 2p + k.
    pub fn transposed_extent(&self, input: usize) -> Result<usize> {
        if input == 0 {
            return Err(Error::InvalidGeometry {
                context: "transposed convolution over an empty extent".to_string(),
            });
        }
        let grown = (input - 1) * self.stride + self.kernel;
        if grown <= 2 * self.padding {
            return Err(Error::InvalidGeometry {
                context: format!(
                    "extent {input} with kernel {}, stride {}, padding {} \
                     gives a non-positive transposed extent",
                    self.kernel, self.stride, self.padding
                ),
            });
        }
        Ok(grown - 2 * self.padding)
    }
}
