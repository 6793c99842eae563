//! MAC staggered grid: face-indexed velocities, cell pressures, strain
//! sampling, divergence, and the Stokes block assembly.

use crate::error::{Error, Result};
use crate::geometry::CellGeometry;
use crate::linsolve::{Csr, SparseSystem, Triplets};

/// Boundary condition on the bottom/top of the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerticalBc {
    /// Velocity prescribed (value supplied per problem via [`BoundaryData`]).
    Dirichlet,
    /// Stress-free: faces stay free, shear rows fall back to interior stencils.
    Natural,
}

/// Identifies where a prescribed boundary value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Bottom,
    Top,
    /// Dirichlet side walls of a non-periodic lateral axis.
    Lateral,
    /// Fluid-solid interface (staircase) and solid interior.
    Gamma,
}

/// Per-problem Dirichlet values, constant per boundary piece.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoundaryData {
    pub gamma: [f64; 3],
    pub bottom: [f64; 3],
    pub top: [f64; 3],
    pub lateral: [f64; 3],
}

impl BoundaryData {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn get(&self, b: Boundary, comp: usize) -> f64 {
        match b {
            Boundary::Bottom => self.bottom[comp],
            Boundary::Top => self.top[comp],
            Boundary::Lateral => self.lateral[comp],
            Boundary::Gamma => self.gamma[comp],
        }
    }
}

/// Classification of a velocity face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceClass {
    Free,
    Fixed(Boundary),
}

/// One term of a strain sample: a face degree of freedom or a boundary datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermRef {
    Face(u32),
    Datum { boundary: Boundary, comp: u8 },
}

/// One scalar strain sample D_kl at a quadrature point. `weight` contains
/// the control-volume measure and, for shear entries (k < l), the Frobenius
/// multiplicity 2, so that
/// `integral(D(f):D(g)) = sum_s weight_s * value_s(f) * value_s(g)`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub weight: f64,
    pub comp: (u8, u8),
    pub position: [f64; 3],
    pub terms: Vec<(TermRef, f64)>,
}

/// Grid description. Cells are unit cubes of side `h`; the vertical axis is
/// `dim - 1`, with `interface_level` optionally marking an internal layer
/// (the macro interface) where shear integration is split one-sided.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub dim: usize,
    pub n: [usize; 3],
    pub h: f64,
    pub origin: [f64; 3],
    pub periodic: [bool; 3],
    pub bottom: VerticalBc,
    pub top: VerticalBc,
    /// Fluid mask per cell (None = all fluid).
    pub fluid: Option<Vec<bool>>,
    pub interface_level: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct StaggeredGrid {
    pub spec: GridSpec,
    /// Face-array dimensions per velocity component.
    face_dims: [[usize; 3]; 3],
    comp_offset: [usize; 4],
    class: Vec<FaceClass>,
}

impl StaggeredGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let dim = spec.dim;
        if dim != 2 && dim != 3 {
            return Err(Error::Shape(format!("grid dim must be 2 or 3, got {dim}")));
        }
        let v = dim - 1;
        if spec.periodic[v] {
            return Err(Error::Shape("vertical axis cannot be periodic".into()));
        }
        if let Some(mask) = &spec.fluid {
            let total = spec.n[0] * spec.n[1] * spec.n[2];
            if mask.len() != total {
                return Err(Error::Layout(format!(
                    "fluid mask has {} entries, grid has {} cells",
                    mask.len(),
                    total
                )));
            }
        }
        let mut face_dims = [[1usize; 3]; 3];
        let mut comp_offset = [0usize; 4];
        for k in 0..dim {
            let mut fd = [1usize; 3];
            for a in 0..dim {
                fd[a] = spec.n[a] + ((a == k && !spec.periodic[k]) as usize);
            }
            face_dims[k] = fd;
        }
        for k in 0..dim {
            comp_offset[k + 1] = comp_offset[k] + face_dims[k].iter().product::<usize>();
        }
        for k in dim..3 {
            comp_offset[k + 1] = comp_offset[k];
        }
        let mut grid = StaggeredGrid {
            spec,
            face_dims,
            comp_offset,
            class: Vec::new(),
        };
        grid.classify_faces();
        Ok(grid)
    }

    /// Grid over the periodic reference cell of a geometry: periodic lateral
    /// axes, Dirichlet top/bottom, fluid mask from the phase labels.
    pub fn for_cell(geom: &CellGeometry) -> Result<Self> {
        let dim = geom.dim();
        let mut periodic = [false; 3];
        for a in 0..dim - 1 {
            periodic[a] = true;
        }
        let mut origin = [0.0f64; 3];
        origin[dim - 1] = -1.0;
        Self::new(GridSpec {
            dim,
            n: geom.voxel_counts(),
            h: geom.h(),
            origin,
            periodic,
            bottom: VerticalBc::Dirichlet,
            top: VerticalBc::Dirichlet,
            fluid: Some(geom.fluid_mask().to_vec()),
            interface_level: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn vertical_axis(&self) -> usize {
        self.spec.dim - 1
    }

    pub fn h(&self) -> f64 {
        self.spec.h
    }

    pub fn cell_count(&self) -> usize {
        self.spec.n[0] * self.spec.n[1] * self.spec.n[2]
    }

    pub fn face_count(&self) -> usize {
        self.comp_offset[self.spec.dim]
    }

    pub fn cell_index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.spec.n[1] + c[1]) * self.spec.n[2] + c[2]
    }

    pub fn cell_coords(&self, idx: usize) -> [usize; 3] {
        let n = &self.spec.n;
        let c2 = idx % n[2];
        let rest = idx / n[2];
        [rest / n[1], rest % n[1], c2]
    }

    pub fn is_fluid_cell(&self, c: [usize; 3]) -> bool {
        match &self.spec.fluid {
            None => true,
            Some(mask) => mask[self.cell_index(c)],
        }
    }

    pub fn face_id(&self, comp: usize, f: [usize; 3]) -> u32 {
        let fd = &self.face_dims[comp];
        debug_assert!(f[0] < fd[0] && f[1] < fd[1] && f[2] < fd[2]);
        (self.comp_offset[comp] + (f[0] * fd[1] + f[1]) * fd[2] + f[2]) as u32
    }

    pub fn face_decompose(&self, fid: u32) -> (usize, [usize; 3]) {
        let fid = fid as usize;
        let comp = (0..self.spec.dim)
            .find(|&k| fid < self.comp_offset[k + 1])
            .expect("face id out of range");
        let rel = fid - self.comp_offset[comp];
        let fd = &self.face_dims[comp];
        let f2 = rel % fd[2];
        let rest = rel / fd[2];
        (comp, [rest / fd[1], rest % fd[1], f2])
    }

    pub fn face_class(&self, fid: u32) -> FaceClass {
        self.class[fid as usize]
    }

    pub fn face_position(&self, fid: u32) -> [f64; 3] {
        let (comp, f) = self.face_decompose(fid);
        let mut x = [0.0f64; 3];
        for a in 0..self.spec.dim {
            let r = if a == comp {
                f[a] as f64
            } else {
                f[a] as f64 + 0.5
            };
            x[a] = self.spec.origin[a] + r * self.spec.h;
        }
        x
    }

    /// Cell neighboring face (comp, f) on the low/high side along `comp`,
    /// accounting for periodic wrap. Returns None outside the domain.
    fn face_cell(&self, comp: usize, f: [usize; 3], high: bool) -> Option<[usize; 3]> {
        let n = self.spec.n[comp];
        let mut c = f;
        if high {
            if self.spec.periodic[comp] {
                c[comp] = f[comp] % n;
            } else if f[comp] >= n {
                return None;
            }
        } else if self.spec.periodic[comp] {
            c[comp] = (f[comp] + n - 1) % n;
        } else {
            if f[comp] == 0 {
                return None;
            }
            c[comp] = f[comp] - 1;
        }
        Some(c)
    }

    fn classify_faces(&mut self) {
        let dim = self.spec.dim;
        let v = dim - 1;
        let mut class = vec![FaceClass::Free; self.face_count()];
        for comp in 0..dim {
            let fd = self.face_dims[comp];
            for i0 in 0..fd[0] {
                for i1 in 0..fd[1] {
                    for i2 in 0..fd[2] {
                        let f = [i0, i1, i2];
                        let fid = self.face_id(comp, f);
                        // Domain-boundary faces along the component axis.
                        if !self.spec.periodic[comp] {
                            if comp == v {
                                if f[v] == 0 && self.spec.bottom == VerticalBc::Dirichlet {
                                    class[fid as usize] = FaceClass::Fixed(Boundary::Bottom);
                                    continue;
                                }
                                if f[v] == self.spec.n[v] && self.spec.top == VerticalBc::Dirichlet
                                {
                                    class[fid as usize] = FaceClass::Fixed(Boundary::Top);
                                    continue;
                                }
                            } else if f[comp] == 0 || f[comp] == self.spec.n[comp] {
                                class[fid as usize] = FaceClass::Fixed(Boundary::Lateral);
                                continue;
                            }
                        }
                        // Solid adjacency: any neighboring solid cell fixes the face.
                        if self.spec.fluid.is_some() {
                            let lo = self.face_cell(comp, f, false);
                            let hi = self.face_cell(comp, f, true);
                            let solid = |c: Option<[usize; 3]>| {
                                c.map(|cc| !self.is_fluid_cell(cc)).unwrap_or(false)
                            };
                            if solid(lo) || solid(hi) {
                                class[fid as usize] = FaceClass::Fixed(Boundary::Gamma);
                                continue;
                            }
                        }
                    }
                }
            }
        }
        self.class = class;
    }

    /// Builds the full face-value array for given boundary data: fixed faces
    /// carry their prescribed values, free faces zero.
    pub fn boundary_field(&self, data: &BoundaryData) -> Vec<f64> {
        let mut out = vec![0.0; self.face_count()];
        for fid in 0..self.face_count() as u32 {
            if let FaceClass::Fixed(b) = self.class[fid as usize] {
                let (comp, _) = self.face_decompose(fid);
                out[fid as usize] = data.get(b, comp);
            }
        }
        out
    }

    /// Interpolates a prescribed-value field from an arbitrary function
    /// (used by manufactured-solution studies): every face, free or fixed,
    /// gets `f(position)[comp]`.
    pub fn project_velocity(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.face_count()];
        for fid in 0..self.face_count() as u32 {
            let (comp, _) = self.face_decompose(fid);
            out[fid as usize] = f(self.face_position(fid))[comp];
        }
        out
    }

    // ----- strain samples -------------------------------------------------

    /// Derivative of velocity component `comp` along `axis` at a lattice
    /// position `p` (lattice coordinate along `axis` and along the component
    /// axis, cell-center coordinates elsewhere). `sigma_side` selects the
    /// one-sided stencil when sampling exactly on the interface level:
    /// +1 above, -1 below.
    fn derivative_terms(
        &self,
        comp: usize,
        axis: usize,
        p: [usize; 3],
        sigma_side: i8,
    ) -> Option<Vec<(TermRef, f64)>> {
        let h = self.spec.h;
        let n = self.spec.n[axis];
        let v = self.vertical_axis();
        debug_assert_ne!(comp, axis);
        let mut f_hi = p;
        let mut f_lo = p;
        // Faces of `comp` have center coordinates along `axis`; positions
        // p-1/2 and p+1/2 correspond to face indices p-1 and p.
        let pa = p[axis];
        let at_interface = axis == v && self.spec.interface_level == Some(pa);
        if at_interface && sigma_side != 0 {
            // One-sided, shifted by half a cell into the selected bulk.
            if sigma_side > 0 {
                if pa + 1 > n {
                    return None;
                }
                f_lo[axis] = pa;
                f_hi[axis] = pa + 1;
            } else {
                if pa < 2 {
                    return None;
                }
                f_lo[axis] = pa - 2;
                f_hi[axis] = pa - 1;
            }
            return Some(vec![
                (TermRef::Face(self.face_id(comp, f_hi)), 1.0 / h),
                (TermRef::Face(self.face_id(comp, f_lo)), -1.0 / h),
            ]);
        }
        if pa >= 1 && pa < n {
            f_lo[axis] = pa - 1;
            f_hi[axis] = pa;
        } else if self.spec.periodic[axis] {
            f_lo[axis] = (pa + n - 1) % n;
            f_hi[axis] = pa % n;
        } else {
            // Domain boundary along `axis`.
            let (bc, boundary) = if axis == v {
                if pa == 0 {
                    (self.spec.bottom, Boundary::Bottom)
                } else {
                    (self.spec.top, Boundary::Top)
                }
            } else {
                (VerticalBc::Dirichlet, Boundary::Lateral)
            };
            match bc {
                VerticalBc::Dirichlet => {
                    // One-sided difference against the boundary value.
                    return Some(if pa == 0 {
                        f_hi[axis] = 0;
                        vec![
                            (TermRef::Face(self.face_id(comp, f_hi)), 2.0 / h),
                            (
                                TermRef::Datum {
                                    boundary,
                                    comp: comp as u8,
                                },
                                -2.0 / h,
                            ),
                        ]
                    } else {
                        f_lo[axis] = n - 1;
                        vec![
                            (
                                TermRef::Datum {
                                    boundary,
                                    comp: comp as u8,
                                },
                                2.0 / h,
                            ),
                            (TermRef::Face(self.face_id(comp, f_lo)), -2.0 / h),
                        ]
                    });
                }
                VerticalBc::Natural => {
                    // Shifted interior stencil; needs two cells.
                    if n < 2 {
                        return None;
                    }
                    if pa == 0 {
                        f_lo[axis] = 0;
                        f_hi[axis] = 1;
                    } else {
                        f_lo[axis] = n - 2;
                        f_hi[axis] = n - 1;
                    }
                }
            }
        }
        Some(vec![
            (TermRef::Face(self.face_id(comp, f_hi)), 1.0 / h),
            (TermRef::Face(self.face_id(comp, f_lo)), -1.0 / h),
        ])
    }

    /// Lattice derivative of component `comp` along its own axis is never
    /// needed here; diagonal strains are per-cell differences of the two
    /// bounding faces.
    fn diagonal_sample(&self, c: [usize; 3], k: usize) -> Sample {
        let h = self.spec.h;
        let d = self.spec.dim;
        let mut f_lo = c;
        let mut f_hi = c;
        f_lo[k] = c[k];
        f_hi[k] = if self.spec.periodic[k] {
            (c[k] + 1) % self.spec.n[k]
        } else {
            c[k] + 1
        };
        let mut pos = [0.0f64; 3];
        for a in 0..d {
            pos[a] = self.spec.origin[a] + (c[a] as f64 + 0.5) * h;
        }
        Sample {
            weight: h.powi(d as i32),
            comp: (k as u8, k as u8),
            position: pos,
            terms: vec![
                (TermRef::Face(self.face_id(k, f_hi)), 1.0 / h),
                (TermRef::Face(self.face_id(k, f_lo)), -1.0 / h),
            ],
        }
    }

    /// Number of fluid cells among the 4 slots around a shear point in the
    /// (k,l) plane; used as the control-volume fraction (quarters).
    fn shear_fluid_count(&self, k: usize, l: usize, p: [usize; 3], side: i8) -> usize {
        let v = self.vertical_axis();
        let mut count = 0;
        for dk in [-1i64, 0] {
            for dl in [-1i64, 0] {
                let mut c = [p[0] as i64, p[1] as i64, p[2] as i64];
                c[k] += dk;
                c[l] += dl;
                // restrict to one side of the interface
                if side != 0 && l == v {
                    let below = c[l] < p[l] as i64;
                    if (side > 0 && below) || (side < 0 && !below) {
                        continue;
                    }
                }
                let mut cc = [0usize; 3];
                let mut ok = true;
                for a in 0..self.spec.dim {
                    let n = self.spec.n[a] as i64;
                    let mut x = c[a];
                    if self.spec.periodic[a] {
                        x = x.rem_euclid(n);
                    } else if x < 0 || x >= n {
                        ok = false;
                        break;
                    }
                    cc[a] = x as usize;
                }
                if ok && self.is_fluid_cell(cc) {
                    count += 1;
                }
            }
        }
        count
    }

    fn shear_samples_at(&self, k: usize, l: usize, p: [usize; 3], out: &mut Vec<Sample>) {
        let d = self.spec.dim;
        let h = self.spec.h;
        let v = self.vertical_axis();
        let at_interface = l == v && self.spec.interface_level == Some(p[l]);
        let sides: &[i8] = if at_interface { &[1, -1] } else { &[0] };
        for &side in sides {
            let count = self.shear_fluid_count(k, l, p, side);
            if count == 0 {
                continue;
            }
            let dk = self.derivative_terms(l, k, p, 0);
            let dl = self.derivative_terms(k, l, p, side);
            let (dk, dl) = match (dk, dl) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            };
            let mut terms = Vec::with_capacity(4);
            for (r, c) in dl {
                terms.push((r, 0.5 * c));
            }
            for (r, c) in dk {
                terms.push((r, 0.5 * c));
            }
            let mut pos = [0.0f64; 3];
            for a in 0..d {
                let r = if a == k || a == l {
                    p[a] as f64
                } else {
                    p[a] as f64 + 0.5
                };
                pos[a] = self.spec.origin[a] + r * h;
            }
            // Frobenius multiplicity 2 for the off-diagonal pair (k,l),(l,k).
            out.push(Sample {
                weight: 2.0 * h.powi(d as i32) * count as f64 / 4.0,
                comp: (k as u8, l as u8),
                position: pos,
                terms,
            });
        }
    }

    /// All strain samples of the grid, diagonal then shear, in a fixed
    /// deterministic order.
    pub fn strain_samples(&self) -> Vec<Sample> {
        let d = self.spec.dim;
        let mut out = Vec::new();
        for idx in 0..self.cell_count() {
            let c = self.cell_coords(idx);
            if !self.is_fluid_cell(c) {
                continue;
            }
            for k in 0..d {
                out.push(self.diagonal_sample(c, k));
            }
        }
        for k in 0..d {
            for l in (k + 1)..d {
                let range = |a: usize| -> Vec<usize> {
                    if a == k || a == l {
                        if self.spec.periodic[a] {
                            (0..self.spec.n[a]).collect()
                        } else {
                            (0..=self.spec.n[a]).collect()
                        }
                    } else {
                        (0..self.spec.n[a]).collect()
                    }
                };
                let r0 = range(0);
                let r1 = range(1);
                let r2 = range(2);
                for &i0 in &r0 {
                    for &i1 in &r1 {
                        for &i2 in &r2 {
                            self.shear_samples_at(k, l, [i0, i1, i2], &mut out);
                        }
                    }
                }
            }
        }
        out
    }

    /// Evaluates a strain sample on a full face-value field.
    pub fn sample_value(&self, s: &Sample, field: &[f64], data: &BoundaryData) -> f64 {
        let mut acc = 0.0;
        for &(r, c) in &s.terms {
            acc += c * match r {
                TermRef::Face(fid) => field[fid as usize],
                TermRef::Datum { boundary, comp } => data.get(boundary, comp as usize),
            };
        }
        acc
    }

    /// Discrete divergence per cell (all cells; solid cells report 0).
    pub fn divergence(&self, field: &[f64]) -> Vec<f64> {
        let d = self.spec.dim;
        let h = self.spec.h;
        let mut out = vec![0.0; self.cell_count()];
        for idx in 0..self.cell_count() {
            let c = self.cell_coords(idx);
            if !self.is_fluid_cell(c) {
                continue;
            }
            let mut acc = 0.0;
            for k in 0..d {
                let mut f_hi = c;
                f_hi[k] = if self.spec.periodic[k] {
                    (c[k] + 1) % self.spec.n[k]
                } else {
                    c[k] + 1
                };
                acc += (field[self.face_id(k, f_hi) as usize]
                    - field[self.face_id(k, c) as usize])
                    / h;
            }
            out[idx] = acc;
        }
        out
    }

    /// Control volume associated with each face (for lumped mass matrices):
    /// h^d scaled by the fraction of adjacent cells that exist and are fluid.
    pub fn face_volumes(&self) -> Vec<f64> {
        let d = self.spec.dim;
        let vol = self.spec.h.powi(d as i32);
        let mut out = vec![0.0; self.face_count()];
        for fid in 0..self.face_count() as u32 {
            let (comp, f) = self.face_decompose(fid);
            let mut frac = 0.0;
            for high in [false, true] {
                if let Some(c) = self.face_cell(comp, f, high) {
                    if self.is_fluid_cell(c) {
                        frac += 0.5;
                    }
                }
            }
            out[fid as usize] = vol * frac;
        }
        out
    }
}

/// Assembled Stokes blocks on a staggered grid. The velocity Gram matrix and
/// the divergence operator are geometry-only; per-problem boundary data
/// enters through the right-hand sides.
pub struct StokesAssembly {
    pub grid: StaggeredGrid,
    pub samples: Vec<Sample>,
    pub free_of_face: Vec<i64>,
    pub face_of_free: Vec<u32>,
    pub n_free: usize,
    /// Pressure numbering over fluid cells.
    pub p_of_cell: Vec<i64>,
    pub cell_of_p: Vec<u32>,
    pub n_p: usize,
    /// Viscous Gram matrix on free faces.
    pub a_mat: Csr,
    /// Divergence (n_p x n_free), integral-scaled: rows are h^{d-1} face sums.
    pub div: Csr,
}

impl StokesAssembly {
    pub fn new(grid: StaggeredGrid) -> Self {
        let samples = grid.strain_samples();
        let mut free_of_face = vec![-1i64; grid.face_count()];
        let mut face_of_free = Vec::new();
        for fid in 0..grid.face_count() as u32 {
            if grid.face_class(fid) == FaceClass::Free {
                free_of_face[fid as usize] = face_of_free.len() as i64;
                face_of_free.push(fid);
            }
        }
        let n_free = face_of_free.len();

        let mut p_of_cell = vec![-1i64; grid.cell_count()];
        let mut cell_of_p = Vec::new();
        for idx in 0..grid.cell_count() {
            if grid.is_fluid_cell(grid.cell_coords(idx)) {
                p_of_cell[idx] = cell_of_p.len() as i64;
                cell_of_p.push(idx as u32);
            }
        }
        let n_p = cell_of_p.len();

        // Velocity Gram matrix.
        let mut a_t = Triplets::new(n_free, n_free);
        for s in &samples {
            for &(r1, c1) in &s.terms {
                let i = match r1 {
                    TermRef::Face(f) => free_of_face[f as usize],
                    _ => -1,
                };
                if i < 0 {
                    continue;
                }
                for &(r2, c2) in &s.terms {
                    let j = match r2 {
                        TermRef::Face(f) => free_of_face[f as usize],
                        _ => -1,
                    };
                    if j < 0 {
                        continue;
                    }
                    a_t.push(i as usize, j as usize, s.weight * c1 * c2);
                }
            }
        }

        // Divergence rows over fluid cells, free faces only.
        let d = grid.dim();
        let area = grid.h().powi(d as i32 - 1);
        let mut div_t = Triplets::new(n_p, n_free);
        for (p, &cell) in cell_of_p.iter().enumerate() {
            let c = grid.cell_coords(cell as usize);
            for k in 0..d {
                let mut f_hi = c;
                f_hi[k] = if grid.spec.periodic[k] {
                    (c[k] + 1) % grid.spec.n[k]
                } else {
                    c[k] + 1
                };
                for (fid, sign) in [(grid.face_id(k, f_hi), 1.0), (grid.face_id(k, c), -1.0)] {
                    let i = free_of_face[fid as usize];
                    if i >= 0 {
                        div_t.push(p, i as usize, sign * area);
                    }
                }
            }
        }

        StokesAssembly {
            grid,
            samples,
            free_of_face,
            face_of_free,
            n_free,
            p_of_cell,
            cell_of_p,
            n_p,
            a_mat: a_t.to_csr(),
            div: div_t.to_csr(),
        }
    }

    /// -a(g, phi) for the prescribed part g of the boundary data.
    pub fn momentum_rhs(&self, data: &BoundaryData) -> Vec<f64> {
        let bfield = self.grid.boundary_field(data);
        let mut rhs = vec![0.0; self.n_free];
        for s in &self.samples {
            // Fixed-part sample value.
            let mut fixed = 0.0;
            let mut has_free = false;
            for &(r, c) in &s.terms {
                match r {
                    TermRef::Face(f) => {
                        if self.free_of_face[f as usize] >= 0 {
                            has_free = true;
                        } else {
                            fixed += c * bfield[f as usize];
                        }
                    }
                    TermRef::Datum { boundary, comp } => {
                        fixed += c * data.get(boundary, comp as usize);
                    }
                }
            }
            if !has_free || fixed == 0.0 {
                continue;
            }
            for &(r, c) in &s.terms {
                if let TermRef::Face(f) = r {
                    let i = self.free_of_face[f as usize];
                    if i >= 0 {
                        rhs[i as usize] -= s.weight * c * fixed;
                    }
                }
            }
        }
        rhs
    }

    /// Right-hand side of the negated continuity rows (-D) v = rhs: the
    /// prescribed-face flux integral per pressure cell, so that the total
    /// divergence (free + fixed faces) vanishes.
    pub fn continuity_rhs(&self, data: &BoundaryData) -> Vec<f64> {
        let bfield = self.grid.boundary_field(data);
        let d = self.grid.dim();
        let area = self.grid.h().powi(d as i32 - 1);
        let mut rhs = vec![0.0; self.n_p];
        for (p, &cell) in self.cell_of_p.iter().enumerate() {
            let c = self.grid.cell_coords(cell as usize);
            let mut acc = 0.0;
            for k in 0..d {
                let mut f_hi = c;
                f_hi[k] = if self.grid.spec.periodic[k] {
                    (c[k] + 1) % self.grid.spec.n[k]
                } else {
                    c[k] + 1
                };
                for (fid, sign) in [
                    (self.grid.face_id(k, f_hi), 1.0),
                    (self.grid.face_id(k, c), -1.0),
                ] {
                    if self.free_of_face[fid as usize] < 0 {
                        acc += sign * area * bfield[fid as usize];
                    }
                }
            }
            rhs[p] = acc;
        }
        rhs
    }

    /// Whether the assembled operator carries the constant-pressure kernel
    /// (every velocity boundary prescribed, no stress boundary).
    pub fn has_pressure_nullspace(&self) -> bool {
        self.grid.spec.bottom == VerticalBc::Dirichlet
            && self.grid.spec.top == VerticalBc::Dirichlet
    }

    /// Assembles the symmetric saddle system
    /// [ A  -D^T ; -D  0 ] (v, p) = (momentum_rhs + extra, continuity_rhs).
    pub fn saddle_system(
        &self,
        data: &BoundaryData,
        extra_momentum: Option<&[f64]>,
        extra_velocity_diag: Option<&[f64]>,
    ) -> SparseSystem {
        let n = self.n_free + self.n_p;
        let mut t = Triplets::new(n, n);
        for r in 0..self.n_free {
            for (c, v) in self.a_mat.row(r) {
                t.push(r, c, v);
            }
        }
        if let Some(dg) = extra_velocity_diag {
            for (i, &v) in dg.iter().enumerate() {
                t.push(i, i, v);
            }
        }
        for r in 0..self.n_p {
            for (c, v) in self.div.row(r) {
                t.push(self.n_free + r, c, -v);
                t.push(c, self.n_free + r, -v);
            }
        }
        let mut rhs = self.momentum_rhs(data);
        if let Some(extra) = extra_momentum {
            for (r, e) in rhs.iter_mut().zip(extra) {
                *r += e;
            }
        }
        rhs.extend(self.continuity_rhs(data));

        let mut sys = SparseSystem::new(t.to_csr(), rhs);
        sys.n_velocity = self.n_free;
        sys.constraints.dirichlet_dofs = self.grid.face_count() - self.n_free;
        sys.constraints.periodic_identified = self.grid.spec.periodic.iter().any(|&p| p);
        if self.has_pressure_nullspace() {
            sys.constraints.pressure_nullspace = true;
            let mut k = vec![0.0; n];
            let c = 1.0 / (self.n_p as f64).sqrt();
            for i in 0..self.n_p {
                k[self.n_free + i] = c;
            }
            sys.kernel = vec![k];
        }
        // Block-diagonal preconditioner: viscous diagonal for velocities,
        // pressure mass diagonal for pressures.
        let mut pd = vec![0.0; n];
        let adiag = self.a_mat.diag();
        let dmax = adiag.iter().cloned().fold(0.0, f64::max).max(1e-300);
        for i in 0..self.n_free {
            pd[i] = if adiag[i] > 0.0 { adiag[i] } else { dmax };
            if let Some(dg) = extra_velocity_diag {
                pd[i] += dg[i];
            }
        }
        let pm = self.grid.h().powi(self.grid.dim() as i32);
        for i in 0..self.n_p {
            pd[self.n_free + i] = pm;
        }
        sys.precond_diag = Some(pd);
        sys
    }

    /// Scatters a free-DOF vector into a full face-value field with the
    /// prescribed boundary values filled in.
    pub fn full_velocity(&self, free: &[f64], data: &BoundaryData) -> Vec<f64> {
        let mut out = self.grid.boundary_field(data);
        for (i, &fid) in self.face_of_free.iter().enumerate() {
            out[fid as usize] = free[i];
        }
        out
    }

    /// Scatters cell pressures from the compact pressure vector.
    pub fn full_pressure(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.cell_count()];
        for (i, &cell) in self.cell_of_p.iter().enumerate() {
            out[cell as usize] = p[i];
        }
        out
    }

    /// integral over the fluid region of D(f):D(g) using the shared
    /// quadrature samples.
    pub fn inner_product_d(
        &self,
        f: &[f64],
        data_f: &BoundaryData,
        g: &[f64],
        data_g: &BoundaryData,
    ) -> f64 {
        let mut acc = 0.0;
        for s in &self.samples {
            acc += s.weight
                * self.grid.sample_value(s, f, data_f)
                * self.grid.sample_value(s, g, data_g);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CellGeometry, GeometryDescriptor};

    fn disc_cell(res: usize) -> StaggeredGrid {
        let geom = CellGeometry::build(
            2,
            res,
            &GeometryDescriptor::Ball {
                radius: 0.3,
                center: None,
            },
        )
        .unwrap();
        StaggeredGrid::for_cell(&geom).unwrap()
    }

    fn affine_field(grid: &StaggeredGrid, m: [[f64; 3]; 3], shift: [f64; 3]) -> Vec<f64> {
        grid.project_velocity(|x| {
            let mut v = [0.0; 3];
            for i in 0..3 {
                v[i] = shift[i] + (0..3).map(|j| m[i][j] * x[j]).sum::<f64>();
            }
            v
        })
    }

    #[test]
    fn constant_field_has_zero_strain_and_divergence() {
        let grid = disc_cell(8);
        let field = grid.project_velocity(|_| [0.7, -0.3, 0.0]);
        let data = BoundaryData {
            gamma: [0.7, -0.3, 0.0],
            bottom: [0.7, -0.3, 0.0],
            top: [0.7, -0.3, 0.0],
            lateral: [0.7, -0.3, 0.0],
        };
        for s in grid.strain_samples() {
            assert!(grid.sample_value(&s, &field, &data).abs() < 1e-13);
        }
        for d in grid.divergence(&field) {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn identity_field_divergence_equals_dim() {
        // Non-periodic box so the linear field is representable.
        let grid = StaggeredGrid::new(GridSpec {
            dim: 2,
            n: [6, 8, 1],
            h: 0.25,
            origin: [0.0, 0.0, 0.0],
            periodic: [false, false, false],
            bottom: VerticalBc::Dirichlet,
            top: VerticalBc::Dirichlet,
            fluid: None,
            interface_level: None,
        })
        .unwrap();
        let field = grid.project_velocity(|x| [x[0], x[1], x[2]]);
        for d in grid.divergence(&field) {
            assert!((d - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_strain_is_exact() {
        // M_12 prestrain on a non-periodic box: D = M everywhere.
        let grid = StaggeredGrid::new(GridSpec {
            dim: 2,
            n: [5, 7, 1],
            h: 0.2,
            origin: [0.0, -0.7, 0.0],
            periodic: [false, false, false],
            bottom: VerticalBc::Dirichlet,
            top: VerticalBc::Dirichlet,
            fluid: None,
            interface_level: None,
        })
        .unwrap();
        let m = [[0.0, 0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let field = affine_field(&grid, m, [0.0; 3]);
        // Wall datum values vary with position for an affine field, so the
        // check covers the interior samples (constant data handles the rest
        // in `constant_field_has_zero_strain_and_divergence`).
        let data = BoundaryData::zero();
        for s in grid.strain_samples() {
            let uses_datum = s
                .terms
                .iter()
                .any(|(r, _)| matches!(r, TermRef::Datum { .. }));
            if uses_datum {
                continue;
            }
            let val = grid.sample_value(&s, &field, &data);
            let expect = if s.comp.0 == s.comp.1 {
                m[s.comp.0 as usize][s.comp.0 as usize]
            } else {
                0.5 * (m[s.comp.0 as usize][s.comp.1 as usize]
                    + m[s.comp.1 as usize][s.comp.0 as usize])
            };
            assert!(
                (val - expect).abs() < 1e-12,
                "sample {:?} at {:?}: {} vs {}",
                s.comp,
                s.position,
                val,
                expect
            );
        }
    }

    #[test]
    fn rigid_rotation_annihilated_on_interior_samples() {
        let grid = StaggeredGrid::new(GridSpec {
            dim: 2,
            n: [6, 6, 1],
            h: 1.0 / 6.0,
            origin: [0.0, 0.0, 0.0],
            periodic: [false, false, false],
            bottom: VerticalBc::Dirichlet,
            top: VerticalBc::Dirichlet,
            fluid: None,
            interface_level: None,
        })
        .unwrap();
        let m = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let field = affine_field(&grid, m, [0.1, 0.2, 0.0]);
        for s in grid.strain_samples() {
            if s.terms
                .iter()
                .any(|(r, _)| matches!(r, TermRef::Datum { .. }))
            {
                continue;
            }
            assert!(grid.sample_value(&s, &field, &BoundaryData::zero()).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_weights_sum_to_fluid_measure_per_component() {
        let grid = disc_cell(8);
        let samples = grid.strain_samples();
        // Diagonal weights per component must each sum to |Z_f|.
        let vol = grid.h().powi(2);
        let fluid_cells = (0..grid.cell_count())
            .filter(|&i| grid.is_fluid_cell(grid.cell_coords(i)))
            .count();
        let zf = fluid_cells as f64 * vol;
        for k in 0..2u8 {
            let sum: f64 = samples
                .iter()
                .filter(|s| s.comp == (k, k))
                .map(|s| s.weight)
                .sum();
            assert!((sum - zf).abs() < 1e-12);
        }
        // Shear weights carry multiplicity 2.
        let sum_shear: f64 = samples
            .iter()
            .filter(|s| s.comp.0 != s.comp.1)
            .map(|s| s.weight)
            .sum();
        assert!((sum_shear - 2.0 * zf).abs() < 1e-12);
    }

    #[test]
    fn gram_matrix_matches_replayed_inner_product() {
        let grid = disc_cell(6);
        let asm = StokesAssembly::new(grid);
        // Random-ish free vector.
        let mut free = vec![0.0; asm.n_free];
        for (i, v) in free.iter_mut().enumerate() {
            *v = ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5;
        }
        let data = BoundaryData::zero();
        let full = asm.full_velocity(&free, &data);
        let quad = asm.inner_product_d(&full, &data, &full, &data);
        let av = asm.a_mat.matvec(&free);
        let mat = crate::linsolve::dot(&free, &av);
        assert!(
            (quad - mat).abs() <= 1e-12 * quad.abs().max(1.0),
            "quadrature {quad} vs matrix {mat}"
        );
    }

    #[test]
    fn divergence_matrix_matches_stencil() {
        let grid = disc_cell(6);
        let asm = StokesAssembly::new(grid);
        let mut free = vec![0.0; asm.n_free];
        for (i, v) in free.iter_mut().enumerate() {
            *v = (((i * 40503) % 977) as f64) / 977.0 - 0.5;
        }
        let data = BoundaryData::zero();
        let full = asm.full_velocity(&free, &data);
        let div_all = asm.grid.divergence(&full);
        let d = asm.div.matvec(&free);
        let area = asm.grid.h();
        for (p, &cell) in asm.cell_of_p.iter().enumerate() {
            // matrix rows are scaled by h^{d-1} * h = cell volume over h:
            // div row = h^{d-1} * sum(faces)/1, stencil = sum(faces)/h.
            let expect = div_all[cell as usize] * area * area;
            assert!(
                (d[p] - expect).abs() < 1e-12,
                "cell {cell}: {} vs {}",
                d[p],
                expect
            );
        }
    }
}
