//! Text-to-feature conversion through a latent space.
//!
//! A frame-wise VAE learns a diagonal-Gaussian latent for acoustic feature
//! frames. A conditional diffusion model then predicts both the mean and the
//! variance of that latent from upsampled token encodings, and an alignment
//! model with a stop-gradient projection supplies durations via monotonic
//! alignment search.

pub mod acoustic;
pub mod alignment;
pub mod analysis;
pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod system;
pub mod vae;

pub use error::{Error, Result};
