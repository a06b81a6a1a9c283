//! Spatio-temporal mesh autoencoder for longitudinal shape data.
//!
//! Meshes in vertex correspondence with a template are encoded by spiral
//! convolutions over a QEM pooling hierarchy, the per-visit latents pass
//! through a masked bidirectional transformer, and a mirrored decoder predicts
//! each visit as a deformation of the subject's baseline mesh. A synthetic
//! cohort generator, the evaluation protocols and an anomaly heatmap export sit
//! on top.

pub mod autodiff;
pub mod cohort;
pub mod config;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod spiral;
pub mod training;
mod util;

pub use error::{Error, Result};
