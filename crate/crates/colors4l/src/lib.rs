//! Semi-supervised image classification with self-supervised proxy tasks.
//!
//! A shared convolutional backbone is trained jointly on a supervised
//! cross-entropy loss over a small labeled set and a 7-way proxy
//! classification loss (four rotations, two flips, recolorization) over
//! the full unlabeled set. The crate bundles the dataset plumbing, the
//! proxy-label generators, the colorization network that supplies the 7th
//! proxy class, the backbones and training loop, and an experiment harness
//! that aggregates multi-seed runs into result tables.

pub mod error;
pub mod nn;
pub mod cli;
pub mod colorizer;
pub mod data;
pub mod model;
pub mod pretext;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
