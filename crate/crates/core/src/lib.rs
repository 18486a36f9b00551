//! Self-scoring and noise refinement for frozen flow-matching video
//! generators.
//!
//! A frozen velocity model scores a latent video by how well it predicts the
//! flow target under controlled re-noising, optionally focusing on moving
//! regions. Scores drive best-of-N selection and gradient-based refinement of
//! the initial sampling noise.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod benchmark;
pub mod error;
pub mod generator;
pub mod masking;
pub mod optim;
pub mod refinement;
pub mod rng;
pub mod scheduler;
pub mod scoring;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use generator::{Condition, GeneratorHandle};
pub use tensor::{LatentDims, LatentVideo, Tensor};
