//! Nonlinear upscaling for 2D nonlinear transport.
//!
//! Coarse-cell averages are advanced in time by a finite-volume balance whose
//! edge fluxes come from constrained local downscaling problems solved on
//! oversampled neighborhoods, or from an MLP trained to reproduce them.

pub mod bench;
pub mod cli;
pub mod coarse_solver;
pub mod config;
pub mod downscale;
pub mod error;
pub mod fields;
pub mod fine_solver;
pub mod linalg;
pub mod mesh;
pub mod physics;
pub mod pipeline;
pub mod surrogate;


pub use error::{Error, Result};
pub use fields::{CellAverages, EdgeTraces, FineField};
