//! Periodic reference cell and macroscopic domain geometry.
//!
//! The reference cell is the box (0,1)^{dim-1} x (-1,1), voxelized at a
//! uniform resolution with a fluid/solid phase label per voxel. The lateral
//! directions are periodic, the vertical direction runs from the bottom
//! boundary S- to the top boundary S+. The solid phase must stay away from
//! S+/S- and both phases must be face-connected (with lateral wrap).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::Path;

/// Phase label of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Fluid,
    Solid,
}

/// Tag carried by a boundary face of a fluid voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTag {
    Interior,
    /// Fluid-solid interface face.
    Gamma,
    /// Top boundary face (vertical coordinate +1).
    SPlus,
    /// Bottom boundary face (vertical coordinate -1).
    SMinus,
    /// Lateral cell boundary face identified with the opposite side.
    LateralPeriodic,
}

/// Implicit or explicit description of the solid phase inside the cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryDescriptor {
    /// Solid ball (disc in 2d). Lateral center coordinates wrap periodically.
    Ball {
        radius: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// Solid cylinder along one lateral axis (3d); equals `Ball` in 2d.
    Cylinder {
        radius: f64,
        axis: usize,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// Axis-aligned solid box, corners in cell coordinates.
    SolidBox { min: Vec<f64>, max: Vec<f64> },
    /// Explicit voxel mask (true = solid), lexicographic with the last axis fastest.
    Mask { solid: Vec<bool> },
}

/// Voxelized periodic reference cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellGeometry {
    dim: usize,
    resolution: usize,
    /// Voxel counts per axis; axes beyond `dim` are 1.
    n: [usize; 3],
    /// Per-voxel fluid flag, indexed by [`CellGeometry::voxel_index`].
    fluid: Vec<bool>,
    hash: String,
}

impl CellGeometry {
    /// Builds and validates a cell geometry from a descriptor.
    pub fn build(dim: usize, resolution: usize, desc: &GeometryDescriptor) -> Result<Self> {
        let geom = Self::build_unchecked(dim, resolution, desc)?;
        let report = geom.check_admissibility();
        if !report.is_admissible() {
            return Err(Error::Admissibility(report.describe()));
        }
        Ok(geom)
    }

    /// Voxelizes a descriptor without running the admissibility check.
    ///
    /// Mainly useful for the checker itself and for tests that need
    /// deliberately broken geometries.
    pub fn build_unchecked(
        dim: usize,
        resolution: usize,
        desc: &GeometryDescriptor,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Format(format!("dim must be 2 or 3, got {dim}")));
        }
        if resolution < 4 {
            return Err(Error::Format(format!(
                "resolution must be >= 4, got {resolution}"
            )));
        }
        let n = cell_voxel_counts(dim, resolution);
        let total = n[0] * n[1] * n[2];
        let h = 1.0 / resolution as f64;

        let mut fluid = vec![true; total];
        match desc {
            GeometryDescriptor::Mask { solid } => {
                if solid.len() != total {
                    return Err(Error::Format(format!(
                        "mask length {} does not match {}x{}x{} voxels",
                        solid.len(),
                        n[0],
                        n[1],
                        n[2]
                    )));
                }
                for (i, &s) in solid.iter().enumerate() {
                    fluid[i] = !s;
                }
            }
            _ => {
                for idx in 0..total {
                    let c = voxel_coords_from_index(&n, idx);
                    let y = voxel_center(dim, h, c);
                    if descriptor_contains(dim, desc, &y)? {
                        fluid[idx] = false;
                    }
                }
            }
        }

        let hash = mask_hash(dim, resolution, &fluid);
        Ok(CellGeometry {
            dim,
            resolution,
            n,
            fluid,
            hash,
        })
    }

    /// Builds a geometry directly from a raw solid mask.
    pub fn from_mask(dim: usize, resolution: usize, solid: Vec<bool>) -> Result<Self> {
        Self::build(dim, resolution, &GeometryDescriptor::Mask { solid })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Voxel edge length.
    pub fn h(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    /// Voxel counts per axis (unused axes are 1). The last used axis
    /// (`dim - 1`) is the vertical one and has `2 * resolution` voxels.
    pub fn voxel_counts(&self) -> [usize; 3] {
        self.n
    }

    /// Index of the vertical axis.
    pub fn vertical_axis(&self) -> usize {
        self.dim - 1
    }

    pub fn total_voxels(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn voxel_index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.n[1] + c[1]) * self.n[2] + c[2]
    }

    pub fn voxel_coords(&self, idx: usize) -> [usize; 3] {
        voxel_coords_from_index(&self.n, idx)
    }

    pub fn is_fluid(&self, c: [usize; 3]) -> bool {
        self.fluid[self.voxel_index(c)]
    }

    pub fn fluid_mask(&self) -> &[bool] {
        &self.fluid
    }

    /// Content hash over (dim, resolution, mask); used as the cache key.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Center coordinates of a voxel: lateral in (0,1), vertical in (-1,1).
    pub fn voxel_center(&self, c: [usize; 3]) -> [f64; 3] {
        voxel_center(self.dim, self.h(), c)
    }

    /// Neighbor voxel in direction `axis` (+1/-1), wrapping laterally.
    /// Returns `None` when stepping through S+ or S-.
    pub fn neighbor(&self, c: [usize; 3], axis: usize, step: isize) -> Option<[usize; 3]> {
        let mut out = c;
        let len = self.n[axis];
        let pos = c[axis] as isize + step;
        if axis == self.vertical_axis() {
            if pos < 0 || pos >= len as isize {
                return None;
            }
            out[axis] = pos as usize;
        } else {
            out[axis] = pos.rem_euclid(len as isize) as usize;
        }
        Some(out)
    }

    /// Runs all admissibility checks and reports every violated condition
    /// with the first witness voxel found.
    pub fn check_admissibility(&self) -> AdmissibilityReport {
        let mut report = AdmissibilityReport::default();
        let v = self.vertical_axis();
        let nz = self.n[v];

        let n_solid = self.fluid.iter().filter(|f| !**f).count();
        let n_fluid = self.total_voxels() - n_solid;
        if n_solid == 0 {
            report.violations.push(Violation {
                message: "solid phase is empty".into(),
                witness: None,
            });
        }
        if n_fluid == 0 {
            report.violations.push(Violation {
                message: "fluid phase is empty".into(),
                witness: None,
            });
        }

        // Solid must keep a fluid layer below S+ and above S-: scan the top
        // and bottom voxel layers for solid voxels.
        let mut touches_top = None;
        let mut touches_bottom = None;
        for idx in 0..self.total_voxels() {
            if self.fluid[idx] {
                continue;
            }
            let c = self.voxel_coords(idx);
            if c[v] == nz - 1 && touches_top.is_none() {
                touches_top = Some(c);
            }
            if c[v] == 0 && touches_bottom.is_none() {
                touches_bottom = Some(c);
            }
        }
        if let Some(c) = touches_top {
            report.violations.push(Violation {
                message: "solid touches S+".into(),
                witness: Some(c),
            });
        }
        if let Some(c) = touches_bottom {
            report.violations.push(Violation {
                message: "solid touches S-".into(),
                witness: Some(c),
            });
        }

        if n_fluid > 0 {
            if let Some(c) = self.connectivity_witness(true) {
                report.violations.push(Violation {
                    message: "fluid not connected".into(),
                    witness: Some(c),
                });
            }
        }
        if n_solid > 0 {
            if let Some(c) = self.connectivity_witness(false) {
                report.violations.push(Violation {
                    message: "solid not connected".into(),
                    witness: Some(c),
                });
            }
        }

        // Periodic wrap must reproduce the mask exactly; always true for a
        // stored mask, kept as a structural self-check.
        for axis in 0..self.dim - 1 {
            if !self.wrap_is_involution(axis) {
                report.violations.push(Violation {
                    message: format!("phase mask inconsistent under periodic wrap on axis {axis}"),
                    witness: None,
                });
            }
        }

        // Solid crossing the lateral boundary is allowed (periodic wrap) but
        // Lipschitz regularity of such interfaces cannot be checked on the
        // voxel level.
        if self.solid_wraps_laterally() {
            report.warnings.push(
                "solid phase crosses the lateral cell boundary; Lipschitz regularity of the \
                 wrapped interface is not verified"
                    .into(),
            );
        }

        report
    }

    fn solid_wraps_laterally(&self) -> bool {
        let v = self.vertical_axis();
        for idx in 0..self.total_voxels() {
            if self.fluid[idx] {
                continue;
            }
            let c = self.voxel_coords(idx);
            for axis in 0..self.dim {
                if axis == v {
                    continue;
                }
                if c[axis] == 0 || c[axis] == self.n[axis] - 1 {
                    return true;
                }
            }
        }
        false
    }

    fn wrap_is_involution(&self, axis: usize) -> bool {
        for idx in 0..self.total_voxels() {
            let mut c = self.voxel_coords(idx);
            c[axis] = (c[axis] + self.n[axis]) % self.n[axis];
            if self.fluid[self.voxel_index(c)] != self.fluid[idx] {
                return false;
            }
        }
        true
    }

    /// BFS over face neighbors (lateral wrap included). Returns a voxel of
    /// the phase that is unreachable from the phase's first voxel, if any.
    fn connectivity_witness(&self, phase_fluid: bool) -> Option<[usize; 3]> {
        let total = self.total_voxels();
        let start = (0..total).find(|&i| self.fluid[i] == phase_fluid)?;
        let mut seen = vec![false; total];
        let mut queue = std::collections::VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let c = self.voxel_coords(idx);
            for axis in 0..self.dim {
                for step in [-1isize, 1] {
                    if let Some(nb) = self.neighbor(c, axis, step) {
                        let j = self.voxel_index(nb);
                        if !seen[j] && self.fluid[j] == phase_fluid {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        (0..total)
            .find(|&i| self.fluid[i] == phase_fluid && !seen[i])
            .map(|i| self.voxel_coords(i))
    }

    /// Tag of the face of voxel `c` in direction (`axis`, `step`).
    /// Only meaningful for fluid voxels; solid voxel faces report `Interior`
    /// or `Gamma` seen from the fluid side.
    pub fn face_tag(&self, c: [usize; 3], axis: usize, step: isize) -> FaceTag {
        let v = self.vertical_axis();
        match self.neighbor(c, axis, step) {
            None => {
                if step > 0 {
                    FaceTag::SPlus
                } else {
                    FaceTag::SMinus
                }
            }
            Some(nb) => {
                if self.is_fluid(nb) != self.is_fluid(c) {
                    FaceTag::Gamma
                } else if axis != v
                    && ((step < 0 && c[axis] == 0) || (step > 0 && c[axis] == self.n[axis] - 1))
                {
                    FaceTag::LateralPeriodic
                } else {
                    FaceTag::Interior
                }
            }
        }
    }

    /// Counts of boundary-face tags over all fluid voxels.
    pub fn face_tag_counts(&self) -> FaceTagCounts {
        let mut counts = FaceTagCounts::default();
        for idx in 0..self.total_voxels() {
            if !self.fluid[idx] {
                continue;
            }
            let c = self.voxel_coords(idx);
            for axis in 0..self.dim {
                for step in [-1isize, 1] {
                    match self.face_tag(c, axis, step) {
                        FaceTag::Interior => counts.interior += 1,
                        FaceTag::Gamma => counts.gamma += 1,
                        FaceTag::SPlus => counts.s_plus += 1,
                        FaceTag::SMinus => counts.s_minus += 1,
                        FaceTag::LateralPeriodic => counts.lateral_periodic += 1,
                    }
                }
            }
        }
        counts
    }

    /// Volume of one phase and the total fluid-solid interface area.
    ///
    /// Volumes are exact in voxel measure, so `fluid + solid = 2` always.
    /// The interface area sums the areas of fluid-solid voxel faces.
    pub fn measure_phase(&self, phase: Phase) -> PhaseMeasure {
        let h = self.h();
        let voxel_vol = h.powi(self.dim as i32);
        let face_area = h.powi(self.dim as i32 - 1);
        let want_fluid = phase == Phase::Fluid;
        let mut count = 0usize;
        let mut gamma_faces = 0usize;
        for idx in 0..self.total_voxels() {
            let c = self.voxel_coords(idx);
            if self.fluid[idx] {
                if want_fluid {
                    count += 1;
                }
                for axis in 0..self.dim {
                    for step in [-1isize, 1] {
                        if let Some(nb) = self.neighbor(c, axis, step) {
                            if !self.is_fluid(nb) {
                                gamma_faces += 1;
                            }
                        }
                    }
                }
            } else if !want_fluid {
                count += 1;
            }
        }
        PhaseMeasure {
            volume: count as f64 * voxel_vol,
            interface_area: gamma_faces as f64 * face_area,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMeasure {
    pub volume: f64,
    pub interface_area: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AdmissibilityReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub message: String,
    pub witness: Option<[usize; 3]>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn describe(&self) -> String {
        if self.is_admissible() {
            return "admissible".into();
        }
        self.violations
            .iter()
            .map(|v| match v.witness {
                Some(c) => format!("{} (witness voxel {:?})", v.message, c),
                None => v.message.clone(),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaceTagCounts {
    pub interior: usize,
    pub gamma: usize,
    pub s_plus: usize,
    pub s_minus: usize,
    pub lateral_periodic: usize,
}

/// Voxel counts for a cell at the given resolution: lateral axes get
/// `resolution` voxels, the vertical axis `2 * resolution`.
pub fn cell_voxel_counts(dim: usize, resolution: usize) -> [usize; 3] {
    let mut n = [1usize; 3];
    for (axis, item) in n.iter_mut().enumerate().take(dim) {
        *item = if axis == dim - 1 {
            2 * resolution
        } else {
            resolution
        };
    }
    n
}

fn voxel_coords_from_index(n: &[usize; 3], idx: usize) -> [usize; 3] {
    let c2 = idx % n[2];
    let rest = idx / n[2];
    let c1 = rest % n[1];
    let c0 = rest / n[1];
    [c0, c1, c2]
}

fn voxel_center(dim: usize, h: f64, c: [usize; 3]) -> [f64; 3] {
    let mut y = [0.0f64; 3];
    for axis in 0..dim {
        let x = (c[axis] as f64 + 0.5) * h;
        y[axis] = if axis == dim - 1 { x - 1.0 } else { x };
    }
    y
}

/// Nearest-image lateral difference; vertical difference is plain.
fn periodic_delta(dim: usize, axis: usize, a: f64, b: f64) -> f64 {
    let d = a - b;
    if axis == dim - 1 {
        d
    } else {
        d - d.round()
    }
}

fn descriptor_contains(dim: usize, desc: &GeometryDescriptor, y: &[f64; 3]) -> Result<bool> {
    match desc {
        GeometryDescriptor::Ball { radius, center } => {
            let ctr = descriptor_center(dim, center)?;
            let mut r2 = 0.0;
            for axis in 0..dim {
                let d = periodic_delta(dim, axis, y[axis], ctr[axis]);
                r2 += d * d;
            }
            Ok(r2 <= radius * radius)
        }
        GeometryDescriptor::Cylinder {
            radius,
            axis,
            center,
        } => {
            if dim == 2 {
                return descriptor_contains(
                    dim,
                    &GeometryDescriptor::Ball {
                        radius: *radius,
                        center: center.clone(),
                    },
                    y,
                );
            }
            if *axis >= dim - 1 {
                return Err(Error::Format(format!(
                    "cylinder axis must be lateral (< {}), got {axis}",
                    dim - 1
                )));
            }
            let ctr = descriptor_center(dim, center)?;
            let mut r2 = 0.0;
            for a in 0..dim {
                if a == *axis {
                    continue;
                }
                let d = periodic_delta(dim, a, y[a], ctr[a]);
                r2 += d * d;
            }
            Ok(r2 <= radius * radius)
        }
        GeometryDescriptor::SolidBox { min, max } => {
            if min.len() != dim || max.len() != dim {
                return Err(Error::Format(format!(
                    "solid box corners must have {dim} components"
                )));
            }
            Ok((0..dim).all(|a| y[a] >= min[a] && y[a] <= max[a]))
        }
        GeometryDescriptor::Mask { .. } => unreachable!("mask handled by caller"),
    }
}

fn descriptor_center(dim: usize, center: &Option<Vec<f64>>) -> Result<[f64; 3]> {
    match center {
        None => {
            let mut c = [0.5f64; 3];
            c[dim - 1] = 0.0;
            Ok(c)
        }
        Some(v) => {
            if v.len() != dim {
                return Err(Error::Format(format!(
                    "descriptor center must have {dim} components"
                )));
            }
            let mut c = [0.0f64; 3];
            c[..dim].copy_from_slice(&v[..dim]);
            Ok(c)
        }
    }
}

fn mask_hash(dim: usize, resolution: usize, fluid: &[bool]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((dim as u64).to_le_bytes());
    hasher.update((resolution as u64).to_le_bytes());
    let bytes: Vec<u8> = fluid.iter().map(|&f| if f { 0u8 } else { 1u8 }).collect();
    hasher.update(&bytes);
    hex::encode(&hasher.finalize()[..16])
}

/// Reads an explicit mask file: flat binary u8 (nonzero = solid) with a
/// 4 x u32 little-endian header (dim, n0, n1, n2), or CSV rows
/// `c0,c1,c2,label` where label is `0`/`fluid` or `1`/`solid`.
pub fn read_mask_file(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let data = std::fs::read(path)?;
    if path.extension().map(|e| e == "csv").unwrap_or(false) {
        read_mask_csv(&data)
    } else {
        read_mask_binary(&data)
    }
}

fn read_mask_binary(data: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    if data.len() < 16 {
        return Err(Error::Format("mask file shorter than its header".into()));
    }
    let mut header = [0u32; 4];
    let mut cursor = &data[..16];
    for slot in header.iter_mut() {
        let mut buf = [0u8; 4];
        cursor.read_exact(&mut buf)?;
        *slot = u32::from_le_bytes(buf);
    }
    let dim = header[0] as usize;
    if dim != 2 && dim != 3 {
        return Err(Error::Format(format!("mask header dim {} invalid", dim)));
    }
    let n = [header[1] as usize, header[2] as usize, header[3] as usize];
    let resolution = n[0];
    let expect = cell_voxel_counts(dim, resolution);
    if n != expect {
        return Err(Error::Format(format!(
            "mask header {:?} does not match a cell at resolution {} (expected {:?})",
            n, resolution, expect
        )));
    }
    let total = n[0] * n[1] * n[2];
    if data.len() != 16 + total {
        return Err(Error::Format(format!(
            "mask payload has {} bytes, expected {}",
            data.len() - 16,
            total
        )));
    }
    let solid = data[16..].iter().map(|&b| b != 0).collect();
    Ok((dim, resolution, solid))
}

fn read_mask_csv(data: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let text = std::str::from_utf8(data)
        .map_err(|_| Error::Format("mask csv is not valid utf-8".into()))?;
    let mut entries: Vec<([usize; 3], bool)> = Vec::new();
    let mut max = [0usize; 3];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Format(format!(
                "mask csv line {}: expected `c0,c1,c2,label`",
                lineno + 1
            )));
        }
        let mut c = [0usize; 3];
        for (slot, p) in c.iter_mut().zip(&parts[..3]) {
            *slot = p
                .parse()
                .map_err(|_| Error::Format(format!("mask csv line {}: bad index", lineno + 1)))?;
        }
        let solid = match parts[3] {
            "0" | "fluid" => false,
            "1" | "solid" => true,
            other => {
                return Err(Error::Format(format!(
                    "mask csv line {}: unknown label {:?}",
                    lineno + 1,
                    other
                )))
            }
        };
        for a in 0..3 {
            max[a] = max[a].max(c[a] + 1);
        }
        entries.push((c, solid));
    }
    let dim = if max[2] <= 1 { 2 } else { 3 };
    let resolution = max[0];
    let n = cell_voxel_counts(dim, resolution);
    if max != n {
        return Err(Error::Format(format!(
            "mask csv extent {:?} does not match a cell at resolution {} (expected {:?})",
            max, resolution, n
        )));
    }
    let total = n[0] * n[1] * n[2];
    if entries.len() != total {
        return Err(Error::Format(format!(
            "mask csv has {} rows, expected {}",
            entries.len(),
            total
        )));
    }
    let mut solid = vec![false; total];
    for (c, s) in entries {
        solid[(c[0] * n[1] + c[1]) * n[2] + c[2]] = s;
    }
    Ok((dim, resolution, solid))
}

/// Writes the binary mask format produced by [`read_mask_file`].
pub fn write_mask_binary(path: &Path, geom: &CellGeometry) -> Result<()> {
    let n = geom.voxel_counts();
    let mut out = Vec::with_capacity(16 + geom.total_voxels());
    for v in [geom.dim() as u32, n[0] as u32, n[1] as u32, n[2] as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(geom.fluid_mask().iter().map(|&f| if f { 0u8 } else { 1u8 }));
    std::fs::write(path, out)?;
    Ok(())
}

/// Macroscopic domain: Sigma x (-H, H) with Sigma an integer box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacroDomain {
    pub dim: usize,
    /// Lower corner of Sigma (dim-1 integer components).
    pub sigma_min: Vec<i64>,
    /// Upper corner of Sigma.
    pub sigma_max: Vec<i64>,
    /// Bulk half-height H.
    pub half_height: f64,
    /// Mesh cells per unit length.
    pub mesh_resolution: usize,
}

impl MacroDomain {
    pub fn new(
        dim: usize,
        sigma_min: Vec<i64>,
        sigma_max: Vec<i64>,
        half_height: f64,
        mesh_resolution: usize,
    ) -> Result<Self> {
        let dom = MacroDomain {
            dim,
            sigma_min,
            sigma_max,
            half_height,
            mesh_resolution,
        };
        dom.validate()?;
        Ok(dom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Format(format!(
                "macro domain dim must be 2 or 3, got {}",
                self.dim
            )));
        }
        if self.sigma_min.len() != self.dim - 1 || self.sigma_max.len() != self.dim - 1 {
            return Err(Error::Format(format!(
                "sigma corners must have {} components",
                self.dim - 1
            )));
        }
        for (a, b) in self.sigma_min.iter().zip(&self.sigma_max) {
            if a >= b {
                return Err(Error::Format(format!(
                    "sigma must satisfy a_i < b_i componentwise, got [{a}, {b}]"
                )));
            }
        }
        if self.half_height <= 0.0 || self.half_height.is_nan() {
            return Err(Error::Format("half-height H must be positive".into()));
        }
        if self.mesh_resolution == 0 {
            return Err(Error::Format("mesh resolution must be positive".into()));
        }
        let layers = self.half_height * self.mesh_resolution as f64;
        if (layers - layers.round()).abs() > 1e-12 || layers.round() < 1.0 {
            return Err(Error::Format(format!(
                "H * mesh_resolution must be a positive integer so the bulk meshes \
                 align with Sigma (got {layers})"
            )));
        }
        Ok(())
    }

    /// Mesh spacing.
    pub fn h(&self) -> f64 {
        1.0 / self.mesh_resolution as f64
    }

    /// Number of mesh cells along each lateral axis of Sigma.
    pub fn lateral_cells(&self) -> Vec<usize> {
        self.sigma_min
            .iter()
            .zip(&self.sigma_max)
            .map(|(a, b)| ((b - a) as usize) * self.mesh_resolution)
            .collect()
    }

    /// Number of mesh cells across one bulk (0 < z < H).
    pub fn vertical_cells_per_bulk(&self) -> usize {
        (self.half_height * self.mesh_resolution as f64).round() as usize
    }

    /// Checks the boundary partition: top/bottom (stress), lateral
    /// (Dirichlet) and Sigma cover the boundary exactly once. Returns the
    /// measures (|partial_N|, |partial_D|, |Sigma|).
    pub fn boundary_partition(&self) -> (f64, f64, f64) {
        let lat: Vec<f64> = self
            .sigma_min
            .iter()
            .zip(&self.sigma_max)
            .map(|(a, b)| (b - a) as f64)
            .collect();
        let sigma_area: f64 = lat.iter().product();
        let n_area = 2.0 * sigma_area;
        let perimeter: f64 = match lat.len() {
            1 => 2.0,
            2 => 2.0 * (lat[0] + lat[1]),
            _ => unreachable!(),
        };
        let d_area = perimeter * 2.0 * self.half_height;
        (n_area, d_area, sigma_area)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(dim: usize, res: usize, r: f64) -> GeometryDescriptor {
        let _ = (dim, res);
        GeometryDescriptor::Ball {
            radius: r,
            center: None,
        }
    }

    #[test]
    fn ball_solid_fraction_matches_analytic_volume() {
        let geom = CellGeometry::build(3, 16, &ball(3, 16, 0.3)).unwrap();
        let solid = geom.measure_phase(Phase::Solid);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.3f64.powi(3);
        // One voxel layer around the sphere surface bounds the voxelization error.
        let layer = 4.0 * std::f64::consts::PI * 0.3 * 0.3 * geom.h();
        assert!(
            (solid.volume - exact).abs() <= layer,
            "voxel volume {} vs analytic {} (allow {})",
            solid.volume,
            exact,
            layer
        );
    }

    #[test]
    fn slab_touching_bottom_is_rejected() {
        let desc = GeometryDescriptor::SolidBox {
            min: vec![0.0, -1.0],
            max: vec![1.0, -0.5],
        };
        let err = CellGeometry::build(2, 8, &desc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("touches S-"), "got: {msg}");
    }

    #[test]
    fn all_fluid_mask_is_rejected() {
        let n: usize = 8 * 16;
        let err = CellGeometry::from_mask(2, 8, vec![false; n]).unwrap_err();
        assert!(err.to_string().contains("solid phase is empty"));
    }

    #[test]
    fn disconnected_solid_is_reported() {
        // Two separated 2x2 blocks in 2d.
        let res = 8;
        let n = cell_voxel_counts(2, res);
        let mut solid = vec![false; n[0] * n[1]];
        for (c0, c1) in [(1usize, 7usize), (1, 8), (2, 7), (2, 8)] {
            solid[c0 * n[1] + c1] = true;
        }
        for (c0, c1) in [(5usize, 7usize), (5, 8), (6, 7), (6, 8)] {
            solid[c0 * n[1] + c1] = true;
        }
        let geom = CellGeometry::build_unchecked(2, res, &GeometryDescriptor::Mask { solid })
            .unwrap();
        let report = geom.check_admissibility();
        assert!(report.describe().contains("solid not connected"));
    }

    #[test]
    fn oversized_ball_touches_both_plates() {
        let geom = CellGeometry::build_unchecked(2, 8, &ball(2, 8, 1.2)).unwrap();
        let report = geom.check_admissibility();
        let text = report.describe();
        assert!(text.contains("solid touches S+"), "got: {text}");
        assert!(text.contains("solid touches S-"), "got: {text}");
    }

    #[test]
    fn admissible_ball_has_clean_report() {
        let geom = CellGeometry::build(2, 16, &ball(2, 16, 0.3)).unwrap();
        let report = geom.check_admissibility();
        assert!(report.is_admissible());
    }

    #[test]
    fn axis_aligned_box_volume_is_exact() {
        for dim in [2usize, 3] {
            let res = 16;
            let desc = GeometryDescriptor::SolidBox {
                min: (0..dim)
                    .map(|a| if a == dim - 1 { -0.25 } else { 0.25 })
                    .collect(),
                max: (0..dim)
                    .map(|a| if a == dim - 1 { 0.25 } else { 0.75 })
                    .collect(),
            };
            let geom = CellGeometry::build(dim, res, &desc).unwrap();
            let solid = geom.measure_phase(Phase::Solid);
            let expect = 0.5f64.powi(dim as i32 - 1) * 0.5;
            assert!(
                (solid.volume - expect).abs() < 1e-12,
                "dim {dim}: {} vs {}",
                solid.volume,
                expect
            );
            let fluid = geom.measure_phase(Phase::Fluid);
            assert!((fluid.volume + solid.volume - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_volumes_partition_the_cell() {
        let geom = CellGeometry::build(3, 8, &ball(3, 8, 0.3)).unwrap();
        let f = geom.measure_phase(Phase::Fluid).volume;
        let s = geom.measure_phase(Phase::Solid).volume;
        assert!((f + s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn plate_face_counts_match_resolution() {
        for dim in [2usize, 3] {
            let res = 8;
            let geom = CellGeometry::build(dim, res, &ball(dim, res, 0.3)).unwrap();
            let counts = geom.face_tag_counts();
            let expect = res.pow(dim as u32 - 1);
            assert_eq!(counts.s_plus, expect);
            assert_eq!(counts.s_minus, expect);
            assert!(counts.gamma > 0);
        }
    }

    #[test]
    fn measure_invariant_under_lateral_translation_by_full_period() {
        let a = CellGeometry::build(
            2,
            16,
            &GeometryDescriptor::Ball {
                radius: 0.3,
                center: Some(vec![0.3, 0.1]),
            },
        )
        .unwrap();
        let b = CellGeometry::build(
            2,
            16,
            &GeometryDescriptor::Ball {
                radius: 0.3,
                center: Some(vec![1.3, 0.1]),
            },
        )
        .unwrap();
        assert_eq!(
            a.measure_phase(Phase::Solid),
            b.measure_phase(Phase::Solid)
        );
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn mask_roundtrip_binary() {
        let geom = CellGeometry::build(2, 8, &ball(2, 8, 0.3)).unwrap();
        let dir = std::env::temp_dir().join("lamina_geom_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mask.bin");
        write_mask_binary(&path, &geom).unwrap();
        let (dim, res, solid) = read_mask_file(&path).unwrap();
        let geom2 = CellGeometry::from_mask(dim, res, solid).unwrap();
        assert_eq!(geom.hash(), geom2.hash());
    }

    #[test]
    fn macro_domain_validation() {
        assert!(MacroDomain::new(2, vec![0], vec![1], 1.0, 8).is_ok());
        assert!(MacroDomain::new(2, vec![1], vec![1], 1.0, 8).is_err());
        assert!(MacroDomain::new(2, vec![0], vec![1], -1.0, 8).is_err());
        assert!(MacroDomain::new(3, vec![0, 0], vec![2, 1], 0.5, 8).is_ok());
        // H * m must be integral.
        assert!(MacroDomain::new(2, vec![0], vec![1], 0.3, 8).is_err());
    }

    #[test]
    fn boundary_partition_covers_domain_boundary() {
        let dom = MacroDomain::new(3, vec![0, 0], vec![2, 3], 1.5, 4).unwrap();
        let (n_area, d_area, sigma_area) = dom.boundary_partition();
        assert!((sigma_area - 6.0).abs() < 1e-12);
        assert!((n_area - 12.0).abs() < 1e-12);
        assert!((d_area - 30.0).abs() < 1e-12);
    }
}
