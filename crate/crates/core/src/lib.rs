//! Point-lane topology reasoning toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`scene`]: synthetic intersection scenes, ground-truth topology and a
//!   detector-noise model that reproduces endpoint deviation.
//! - [`geometry`]: L1 endpoint distance matrices, the learnable exponential
//!   decay map and discrete Fréchet distance.
//! - [`nn`]: a small dense tensor tape with reverse-mode differentiation and
//!   the kernels the decoder needs.
//! - [`decoder`]: the point-lane decoder (merged self-attention with
//!   geometric bias, BEV sampling, scene graph GCNs, heads).
//! - [`training`]: set matching, losses and the optimisation loop.
//! - [`plgm`]: inference-time endpoint refinement by point-lane matching.
//! - [`eval`]: detection/topology metrics and endpoint-gap diagnostics.
//! - [`bench`]: reference-table arithmetic checks and kernel timings.

pub mod bench;
pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod matrix;
pub mod nn;
pub mod plgm;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
pub use matrix::{BinaryMatrix, Matrix};
pub use scene::{DetectionSet, Lane, NoiseSpec, Point3, Scene, SceneConfig};
