//! Discrete differential operators on the voxel cell and the macro mesh.
//!
//! Velocity and pressure live on a staggered (MAC) layout: pressures at cell
//! centers, velocity components on the faces normal to them. The symmetric
//! gradient is sampled at cell centers (diagonal entries) and lattice
//! edges/corners (shear entries); one quadrature rule backs both the
//! assembled bilinear forms and the coefficient integrals so the discrete
//! superposition identities transfer to the effective tensors exactly.

pub mod export;
pub mod staggered;

pub use staggered::{
    Boundary, BoundaryData, FaceClass, GridSpec, Sample, StaggeredGrid, StokesAssembly, TermRef,
    VerticalBc,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// What a discrete field stores and which layout its flat array follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    /// Face-staggered vector field; length = total face count of the grid.
    Velocity,
    /// Cell-centered scalar; length = total cell count.
    Pressure,
    /// Vertex-based vector field; length = dim * vertex count (periodic
    /// lateral vertices stored once).
    Displacement,
}

/// Discrete field on the cell grid. Periodically identified degrees of
/// freedom are stored exactly once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellField {
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl CellField {
    pub fn new(kind: FieldKind, values: Vec<f64>) -> Self {
        CellField { kind, values }
    }

    pub fn check_layout(&self, expected_len: usize, what: &str) -> Result<()> {
        if self.values.len() != expected_len {
            return Err(Error::Layout(format!(
                "{what}: field has {} values, layout expects {expected_len}",
                self.values.len()
            )));
        }
        Ok(())
    }
}

/// Sparse operator together with its layout descriptors, mainly used by the
/// finite-difference cross-checks.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub mat: crate::linsolve::Csr,
    pub domain: String,
    pub range: String,
}
