//! Optic-disc segmentation with a conditional GAN.
//!
//! An encoder–decoder generator maps a fundus photograph to a soft disc mask;
//! a patch discriminator scoring `(image, mask)` pairs drives an
//! adversarial + L1 objective. The crate covers the networks, losses, data
//! pipeline, training loop, post-processing, metrics and a CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod postprocess;
pub mod report;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
