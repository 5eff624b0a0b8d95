//! Unsupervised facial-behavior analysis on synthetic face sprites.
//!
//! The crate chains five stages:
//!
//! * [`synthface`] renders labeled face sprites and audience sessions;
//! * [`keygesture`] winnows each subject's frames to novel "key gestures"
//!   with normalized cross-correlation against a growing template dictionary;
//! * [`vaegan`] jointly trains a VAE and GAN whose reconstruction loss lives
//!   in a discriminator feature space, on top of the [`diffcore`] autodiff;
//! * [`latentlab`] analyses the latent codes: per-subject baselines, anomaly
//!   flags, attribute vectors and matched-filter detection;
//! * [`pipeline`] ties the stages together with config, checkpoints, file
//!   formats and the `lglab` CLI entry points.

pub mod diffcore;
pub mod error;
pub mod keygesture;
pub mod latentlab;
pub mod pipeline;
pub mod synthface;
pub mod vaegan;

pub use error::{Error, Result};
