// Index-heavy tensor arithmetic reads better with explicit loops.
#![allow(clippy::needless_range_loop)]

//! Effective interface laws for a thin periodic porous membrane between two
//! fluid bulks.
//!
//! The crate voxelizes a periodic reference cell, solves the Stokes and
//! elasticity cell problems on it, assembles the effective coefficient
//! tensors of the zero-thickness interface limit, verifies the exact
//! algebraic identities these tensors satisfy, and time-steps the coupled
//! macroscopic Stokes/membrane (gamma = 1) or Stokes/plate (gamma = 3)
//! system on the two bulk domains joined across the flat interface.

pub mod cell_elastic;
pub mod tensor;
pub mod cell_stokes;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod linsolve;
pub mod macroscale;
pub mod verify;

pub use error::{Error, Result};
