//! Continuous-time tensor decomposition driven by graph diffusion and learned
//! per-mode reaction dynamics.

pub mod ad;
pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod ode;
pub mod par;
pub mod rng;
pub mod synth;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use matrix::{Matrix, Shape};
