//! Variational information-bottleneck training with adversarial prior
//! matching, plus the tooling to measure what a released representation
//! leaks about attributes it was never trained on.
//!
//! * [`compute`]: tensors, reverse-mode gradients, layers and Adam.
//! * [`gauss`]: diagonal-Gaussian posteriors and their KL to the prior.
//! * [`data`]: Colored-MNIST generation, discrete joint sources, splits and
//!   the on-disk dataset container.
//! * [`models`]: encoder, decoders, discriminators and reference architectures.
//! * [`train`]: warm-up and the five-block alternating training loop.
//! * [`leakage`]: attribute-inference adversary, MINE, density-ratio KL,
//!   complexity estimates and exact discrete information oracles.

pub mod compute;
pub mod data;
pub mod error;
pub mod gauss;
pub mod leakage;
pub mod models;
pub mod train;

pub use error::{Error, Result};
