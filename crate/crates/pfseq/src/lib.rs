//! Adversarial training lab for attention-based autoregressive
//! sequence-to-sequence models.
//!
//! The crate trains a small encoder/attention/decoder model on a synthetic
//! symbol-to-spectrogram task and compares four training regimes: teacher
//! forcing, scheduled sampling, and their GAN-regularized variants in which a
//! spectral-normalized, causally self-attentive discriminator is trained to
//! tell teacher-forced hidden-state trajectories from free-running ones.
//! Everything runs on a from-scratch reverse-mode tape over `f64` tensors so
//! results are deterministic and gradient-checkable.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod graph;
pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
