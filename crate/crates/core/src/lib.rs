//! Infrared/visible image fusion built around a masked-autoencoder ViT encoder.
//!
//! The pipeline encodes the visible luma and the infrared image with one shared encoder,
//! merges the two token sequences with a comparative fusion module (CFM) and a merging
//! fusion module (MFM), and decodes the result with a shallow ViT decoder. Training is
//! guided: each fusion module is first aligned to the mean of the encoder features, then
//! optimized with an intensity + gradient + Laplacian fusion loss.

pub mod cli;
pub mod data;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
