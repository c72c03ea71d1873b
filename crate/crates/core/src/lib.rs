//! Desk-scale generated-video forensics.
//!
//! The crate renders toy "real" videos, trains small diffusion video generators
//! that produce "fake" ones, extracts spectral and motion forensics, trains
//! detectors and source tracers, explains them with Grad-CAM, and immunizes
//! images against image-to-video generation with projected gradient steps.
//! Every model runs on the reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod forensics;
pub mod gradcheck;
pub mod optim;
pub mod prevention;
pub mod quality;
pub mod tensor;
pub mod toy_world;
pub mod video;

pub use error::{Error, Result};
pub use tensor::Tensor;
