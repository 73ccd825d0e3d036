//! Single-view mesh reconstruction trained without silhouette supervision.
//!
//! A reconstruction network predicts a deformation of a sphere template that
//! a smooth differentiable renderer turns back into an image. Because input
//! photographs do not look like renderings, an image-to-rendering translator
//! (trained adversarially with a cycle-consistency autoencoder) maps inputs
//! into the renderer's output domain first. Both sides are trained in
//! alternating cycles.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod img;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod renderer;
pub mod training;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
