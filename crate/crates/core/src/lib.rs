//! From-scratch deep convolutional GAN engine.
//!
//! Everything numeric is implemented in this crate: dense tensors, seeded
//! counter-based RNG streams, hand-written forward/backward passes for the
//! conv / transposed-conv / batchnorm / dropout / activation layers, the
//! DCGAN and Wasserstein objectives with Adam and RMSProp, an exact
//! Frechet-distance metric built on a Jacobi eigensolver, deterministic
//! epoch batching, and a fully reproducible training loop with bit-exact
//! checkpoints. Image decode/encode goes through the `image` crate; all
//! post-decode math is in-repo.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fid;
pub mod finitediff;
pub mod gradcheck;
pub mod grid;
pub mod layers;
pub mod linalg;
pub mod losses;
pub mod models;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{randn, Dtype, Scalar, Tensor};
