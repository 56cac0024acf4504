//! Semantically conditioned diffusion for labeled 3D point clouds.
//!
//! Two training regimes are supported. In *guided* mode only the spatial
//! channels are diffused and each point keeps its part label; in *unguided*
//! mode the label is carried as a fourth continuous channel, diffused with the
//! coordinates and rounded back to an integer after sampling.

pub mod error;
pub mod grad;

pub use error::{Error, Result};
pub mod apportion;
pub mod cloud;
pub mod rng;
pub mod schedule;
pub mod nn;
pub mod noising;
pub mod chamfer;
pub mod losses;
pub mod optim;
pub mod checkpoint;
pub mod train;
pub mod sample;
pub mod metrics;
pub mod config;
pub mod cli;
