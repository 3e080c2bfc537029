//! Semi-supervised representation learning for entities observed as a
//! spatial fraction map and a temporal surface-area series.
//!
//! The pipeline pretrains a dual-branch autoencoder whose latent space is
//! sharpened by a pairwise constrained loss over a few labels, mines new
//! labels from pure k-means clusters, and trains downstream classifiers.

pub mod array_io;
pub mod augmentation;
pub mod checkpoint;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
