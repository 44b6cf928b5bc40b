//! Hyperbolic radius adjustment for frozen weight matrices.
//!
//! Columns of a pre-trained weight are lifted into the Poincaré ball, their
//! hyperbolic radius is rescaled by a learnable structured matrix through
//! Möbius matrix multiplication, and the result is mapped back to Euclidean
//! space. The crate provides the ball primitives, the four scaling-matrix
//! parametrizations, analytic gradients with a finite-difference oracle, a
//! synthetic radius-alignment task, and the file formats used by the
//! `hyperadapt` binary.

pub mod adapter;
pub mod cli;
pub mod config;
pub mod error;
pub mod grad;
pub mod poincare;
pub mod scaling;
pub mod tensor_file;
pub mod toy;
pub mod verify;

pub use error::{HyperError, Result};
