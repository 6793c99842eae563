//! Field export: legacy structured-grid text format (cell data on the voxel
//! lattice) and CSV. Ordering is deterministic: the structured writer runs
//! x fastest as the format requires, the CSV writer uses the internal
//! lexicographic cell order (last axis fastest).

use super::staggered::StaggeredGrid;
use crate::error::Result;
use std::io::Write;
use std::path::Path;

/// Writes cell-centered scalar and vector data in the legacy structured
/// points text format readable by common grid viewers.
pub fn write_structured_grid(
    path: &Path,
    grid: &StaggeredGrid,
    scalars: &[(&str, &[f64])],
    vectors: &[(&str, &[[f64; 3]])],
) -> Result<()> {
    let n = grid.spec.n;
    let h = grid.h();
    let total = grid.cell_count();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "lamina field dump")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", n[0] + 1, n[1] + 1, n[2] + 1)?;
    writeln!(
        w,
        "ORIGIN {} {} {}",
        grid.spec.origin[0], grid.spec.origin[1], grid.spec.origin[2]
    )?;
    writeln!(w, "SPACING {h} {h} {h}")?;
    writeln!(w, "CELL_DATA {total}")?;
    for (name, data) in scalars {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for c2 in 0..n[2] {
            for c1 in 0..n[1] {
                for c0 in 0..n[0] {
                    writeln!(w, "{:.17e}", data[grid.cell_index([c0, c1, c2])])?;
                }
            }
        }
    }
    for (name, data) in vectors {
        writeln!(w, "VECTORS {name} double")?;
        for c2 in 0..n[2] {
            for c1 in 0..n[1] {
                for c0 in 0..n[0] {
                    let v = data[grid.cell_index([c0, c1, c2])];
                    writeln!(w, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
                }
            }
        }
    }
    Ok(())
}

/// Writes `index,c0,c1,c2,value` rows in internal cell order.
pub fn write_cell_csv(path: &Path, grid: &StaggeredGrid, data: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "index,c0,c1,c2,value")?;
    for idx in 0..grid.cell_count() {
        let c = grid.cell_coords(idx);
        writeln!(w, "{idx},{},{},{},{:.17e}", c[0], c[1], c[2], data[idx])?;
    }
    Ok(())
}

/// Averages face velocities to cell centers for export.
pub fn velocity_at_cell_centers(grid: &StaggeredGrid, field: &[f64]) -> Vec<[f64; 3]> {
    let d = grid.dim();
    let mut out = vec![[0.0f64; 3]; grid.cell_count()];
    for idx in 0..grid.cell_count() {
        let c = grid.cell_coords(idx);
        if !grid.is_fluid_cell(c) {
            continue;
        }
        for k in 0..d {
            let mut f_hi = c;
            f_hi[k] = if grid.spec.periodic[k] {
                (c[k] + 1) % grid.spec.n[k]
            } else {
                c[k] + 1
            };
            out[idx][k] = 0.5
                * (field[grid.face_id(k, c) as usize] + field[grid.face_id(k, f_hi) as usize]);
        }
    }
    out
}
