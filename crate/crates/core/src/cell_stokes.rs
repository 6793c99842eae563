//! Stokes cell problems on the fluid part of the reference cell and the
//! fluid interface coefficient tensors extracted from their solutions.
//!
//! Per geometry there are 2*dim + 1 problems, all plain Stokes systems on
//! the fluid voxels with lateral periodicity and different Dirichlet data:
//!
//! * `q_gamma[i]`: e_i on the fluid-solid interface, zero on top/bottom;
//! * `q_side[side][i]` (tangential i only): e_i on one of top/bottom;
//! * `q_vert`: e_v on both top and bottom, zero on the interface. The
//!   side-resolved vertical solutions are the halves `q_vert / 2`.
//!
//! The coefficient tensors are inner products of symmetric gradients over
//! the fluid region, evaluated with the same quadrature that backs the
//! discrete bilinear form, so the superposition identities between the cell
//! solutions carry over to exact (up to solver tolerance) linear relations
//! between the tensors.

use crate::error::{Error, Result};
use crate::geometry::CellGeometry;
use crate::grid::staggered::{BoundaryData, StaggeredGrid, StokesAssembly};
use crate::linsolve::{solve_saddle_with, Method, SolveStats, SparseLu};
use crate::tensor::{mat_inf_norm, mat_to_rows, mat_zero, Mat3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which side of the membrane a coefficient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Plus => 0,
            Side::Minus => 1,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

pub const SIDES: [Side; 2] = [Side::Plus, Side::Minus];

/// Identifies one of the cell problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellProblem {
    /// Interface-driven problem for direction i (0..dim).
    Gamma(usize),
    /// Plate-driven tangential problem (i in 0..dim-1).
    Plate(Side, usize),
    /// Vertical through-flow problem (e_v on both plates).
    Vertical,
}

impl CellProblem {
    /// Dirichlet data of the problem.
    pub fn boundary_data(&self, dim: usize) -> BoundaryData {
        let v = dim - 1;
        let mut data = BoundaryData::zero();
        match *self {
            CellProblem::Gamma(i) => data.gamma[i] = 1.0,
            CellProblem::Plate(side, i) => match side {
                Side::Plus => data.top[i] = 1.0,
                Side::Minus => data.bottom[i] = 1.0,
            },
            CellProblem::Vertical => {
                data.top[v] = 1.0;
                data.bottom[v] = 1.0;
            }
        }
        data
    }

    pub fn label(&self) -> String {
        match *self {
            CellProblem::Gamma(i) => format!("q_gamma[{i}]"),
            CellProblem::Plate(Side::Plus, i) => format!("q_plus[{i}]"),
            CellProblem::Plate(Side::Minus, i) => format!("q_minus[{i}]"),
            CellProblem::Vertical => "q_vert".into(),
        }
    }
}

/// Solver options shared by all cell problems.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 200_000,
            method: Method::Auto,
        }
    }
}

/// Velocity (full face array) and fluid-cell pressure of one cell problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSolution {
    pub velocity: Vec<f64>,
    /// Pressure over fluid cells (compact numbering), mean zero.
    pub pressure: Vec<f64>,
    pub max_divergence: f64,
    pub stats: SolveStats,
}

/// The complete solution set of one geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StokesCellSolutionSet {
    pub dim: usize,
    pub resolution: usize,
    pub geometry_hash: String,
    pub tol: f64,
    pub q_gamma: Vec<CellSolution>,
    /// `q_side[side][i]` for tangential directions i.
    pub q_side: Vec<Vec<CellSolution>>,
    pub q_vert: CellSolution,
    #[serde(default)]
    pub cache_hit: bool,
}

impl StokesCellSolutionSet {
    /// Velocity field and boundary data of q_i^alpha, including the vertical
    /// convention q_v^alpha = q_vert / 2.
    pub fn side_field(&self, side: Side, i: usize) -> (Vec<f64>, BoundaryData) {
        let v = self.dim - 1;
        if i < v {
            let sol = &self.q_side[side.index()][i];
            (
                sol.velocity.clone(),
                CellProblem::Plate(side, i).boundary_data(self.dim),
            )
        } else {
            let mut field = self.q_vert.velocity.clone();
            for f in field.iter_mut() {
                *f *= 0.5;
            }
            let mut data = BoundaryData::zero();
            data.top[v] = 0.5;
            data.bottom[v] = 0.5;
            (field, data)
        }
    }

    pub fn side_pressure(&self, side: Side, i: usize) -> Vec<f64> {
        let v = self.dim - 1;
        if i < v {
            self.q_side[side.index()][i].pressure.clone()
        } else {
            self.q_vert.pressure.iter().map(|p| 0.5 * p).collect()
        }
    }

    pub fn gamma_field(&self, i: usize) -> (Vec<f64>, BoundaryData) {
        (
            self.q_gamma[i].velocity.clone(),
            CellProblem::Gamma(i).boundary_data(self.dim),
        )
    }
}

/// Size up to which the cell saddle systems go through the direct solver;
/// larger ones use MINRES with the shared exact velocity-block factorization.
const CELL_DIRECT_LIMIT: usize = 8_000;

fn effective_method(assembly: &StokesAssembly, opts: &SolveOptions) -> Method {
    match opts.method {
        Method::Auto => {
            if assembly.n_free + assembly.n_p <= CELL_DIRECT_LIMIT {
                Method::Direct
            } else {
                Method::Iterative
            }
        }
        m => m,
    }
}

/// Solves one Stokes cell problem on a prepared assembly. `velocity_lu` is
/// the shared factorization of the viscous block for the iterative path.
pub fn solve_cell_problem(
    assembly: &StokesAssembly,
    problem: CellProblem,
    opts: &SolveOptions,
    velocity_lu: Option<&SparseLu>,
) -> Result<CellSolution> {
    let dim = assembly.grid.dim();
    let data = problem.boundary_data(dim);
    let sys = assembly.saddle_system(&data, None, None);
    let method = effective_method(assembly, opts);
    let (vfree, pressure, stats) =
        solve_saddle_with(&sys, opts.tol, opts.max_iter, method, velocity_lu)?;
    let velocity = assembly.full_velocity(&vfree, &data);
    let div = assembly.grid.divergence(&velocity);
    let max_divergence = div.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    Ok(CellSolution {
        velocity,
        pressure,
        max_divergence,
        stats,
    })
}

/// All cell problems of a geometry (2*dim + 1 of them), solved in parallel.
pub fn solve_cell_problems(
    geom: &CellGeometry,
    opts: &SolveOptions,
) -> Result<StokesCellSolutionSet> {
    let report = geom.check_admissibility();
    if !report.is_admissible() {
        return Err(Error::Admissibility(report.describe()));
    }
    let dim = geom.dim();
    let grid = StaggeredGrid::for_cell(geom)?;
    let assembly = StokesAssembly::new(grid);

    let mut problems = Vec::new();
    for i in 0..dim {
        problems.push(CellProblem::Gamma(i));
    }
    for side in SIDES {
        for i in 0..dim - 1 {
            problems.push(CellProblem::Plate(side, i));
        }
    }
    problems.push(CellProblem::Vertical);

    // The viscous block is shared by all problems; factor it once when the
    // iterative path will be used.
    let velocity_lu = if effective_method(&assembly, opts) == Method::Iterative {
        Some(
            SparseLu::factor(&assembly.a_mat)
                .map_err(|e| Error::SingularBlock(e.to_string()))?,
        )
    } else {
        None
    };

    let solved: Vec<Result<CellSolution>> = problems
        .par_iter()
        .map(|p| solve_cell_problem(&assembly, *p, opts, velocity_lu.as_ref()))
        .collect();

    let mut results = Vec::with_capacity(solved.len());
    for r in solved {
        results.push(r?);
    }

    let mut iter = results.into_iter();
    let q_gamma: Vec<CellSolution> = (0..dim).map(|_| iter.next().unwrap()).collect();
    let mut q_side = vec![Vec::new(), Vec::new()];
    for side in SIDES {
        for _ in 0..dim - 1 {
            q_side[side.index()].push(iter.next().unwrap());
        }
    }
    let q_vert = iter.next().unwrap();

    Ok(StokesCellSolutionSet {
        dim,
        resolution: geom.resolution(),
        geometry_hash: geom.hash().to_string(),
        tol: opts.tol,
        q_gamma,
        q_side,
        q_vert,
        cache_hit: false,
    })
}

/// Net Dirichlet flux through the boundary of the fluid region; must vanish
/// for each cell problem to be solvable.
pub fn boundary_flux(assembly: &StokesAssembly, problem: CellProblem) -> f64 {
    let data = problem.boundary_data(assembly.grid.dim());
    assembly.continuity_rhs(&data).iter().sum()
}

/// Max over fluid velocity DOFs of |q_i^Gamma + q_i^+ + q_i^- - e_i|,
/// maximized over directions i.
pub fn completeness_residual(set: &StokesCellSolutionSet, assembly: &StokesAssembly) -> f64 {
    let dim = set.dim;
    let mut worst = 0.0f64;
    for i in 0..dim {
        let (g, _) = set.gamma_field(i);
        let (p, _) = set.side_field(Side::Plus, i);
        let (m, _) = set.side_field(Side::Minus, i);
        for fid in 0..assembly.grid.face_count() as u32 {
            let (comp, _) = assembly.grid.face_decompose(fid);
            let e = if comp == i { 1.0 } else { 0.0 };
            let r = (g[fid as usize] + p[fid as usize] + m[fid as usize] - e).abs();
            worst = worst.max(r);
        }
    }
    worst
}

/// The tensor family extracted from the Stokes cell solutions. Index
/// convention follows the defining inner products: `b[alpha][beta][j][i]`
/// pairs the strain of q_i^alpha with q_j^beta, so the matrix acts on
/// side-alpha velocities and is tested against side-beta ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluidInterfaceCoefficients {
    pub dim: usize,
    pub resolution: usize,
    pub geometry_hash: String,
    pub tol: f64,
    /// B^{alpha,beta}; indices [alpha][beta].
    pub b: [[Mat3; 2]; 2],
    /// L^{+-}: couples interface motion to the side tractions.
    pub l: [Mat3; 2],
    /// Navier-slip blocks K^{+-} (same-side).
    pub k: [Mat3; 2],
    /// Cross-side blocks M^{+-} (tangential only).
    pub m: [Mat3; 2],
    /// Interface autocorrelation L^Gamma (symmetric positive definite).
    pub l_gamma: Mat3,
}

impl FluidInterfaceCoefficients {
    /// Magnitude used to normalize identity residuals.
    pub fn scale(&self) -> f64 {
        let mut s = mat_inf_norm(&self.l_gamma, self.dim);
        for a in 0..2 {
            s = s.max(mat_inf_norm(&self.l[a], self.dim));
            s = s.max(mat_inf_norm(&self.k[a], self.dim));
            for bidx in 0..2 {
                s = s.max(mat_inf_norm(&self.b[a][bidx], self.dim));
            }
        }
        s
    }

    /// The interface quadratic form
    /// `L^G xg.xg + 2 sum_a L^a xg.xa + sum_ab B^{ab} xa.xb`,
    /// equal to the squared strain norm of the combined cell field and
    /// therefore nonnegative, with equality on equal triples.
    pub fn quadratic_form(
        &self,
        xi_gamma: &[f64; 3],
        xi_plus: &[f64; 3],
        xi_minus: &[f64; 3],
    ) -> f64 {
        let d = self.dim;
        let xs = [xi_plus, xi_minus];
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += self.l_gamma[i][j] * xi_gamma[i] * xi_gamma[j];
            }
        }
        for a in 0..2 {
            for j in 0..d {
                for i in 0..d {
                    acc += 2.0 * self.l[a][j][i] * xi_gamma[i] * xs[a][j];
                }
            }
        }
        for a in 0..2 {
            for bi in 0..2 {
                for j in 0..d {
                    for i in 0..d {
                        acc += self.b[a][bi][j][i] * xs[a][i] * xs[bi][j];
                    }
                }
            }
        }
        acc
    }
}

/// Assembles all fluid coefficient tensors from a complete solution set.
pub fn assemble_fluid_coefficients(
    set: &StokesCellSolutionSet,
    assembly: &StokesAssembly,
) -> Result<FluidInterfaceCoefficients> {
    let dim = set.dim;
    if set.q_gamma.len() != dim || set.q_side[0].len() != dim - 1 || set.q_side[1].len() != dim - 1
    {
        return Err(Error::IncompleteSet(format!(
            "expected {} gamma and {} per-side solutions",
            dim,
            dim - 1
        )));
    }
    let v = dim - 1;

    let gammas: Vec<(Vec<f64>, BoundaryData)> = (0..dim).map(|i| set.gamma_field(i)).collect();
    let sides: Vec<Vec<(Vec<f64>, BoundaryData)>> = SIDES
        .iter()
        .map(|&s| (0..dim).map(|i| set.side_field(s, i)).collect())
        .collect();

    let ip = |f: &(Vec<f64>, BoundaryData), g: &(Vec<f64>, BoundaryData)| {
        assembly.inner_product_d(&f.0, &f.1, &g.0, &g.1)
    };

    let mut b = [[mat_zero(); 2]; 2];
    let mut l = [mat_zero(); 2];
    let mut l_gamma = mat_zero();
    for a in 0..2 {
        for bi in 0..2 {
            for j in 0..dim {
                for i in 0..dim {
                    b[a][bi][j][i] = ip(&sides[a][i], &sides[bi][j]);
                }
            }
        }
        for j in 0..dim {
            for i in 0..dim {
                l[a][j][i] = ip(&gammas[i], &sides[a][j]);
            }
        }
    }
    for i in 0..dim {
        for j in 0..dim {
            l_gamma[i][j] = ip(&gammas[i], &gammas[j]);
        }
    }

    // K: same-side B with the vertical rows/columns doubled.
    let mut k = [mat_zero(); 2];
    for a in 0..2 {
        for i in 0..dim {
            for j in 0..dim {
                let factor = if i == v || j == v { 2.0 } else { 1.0 };
                k[a][i][j] = factor * b[a][a][i][j];
            }
        }
    }
    // M: cross-side B, tangential block only.
    let mut m = [mat_zero(); 2];
    for a in 0..2 {
        let opp = 1 - a;
        for i in 0..v {
            for j in 0..v {
                m[a][i][j] = b[a][opp][i][j];
            }
        }
    }

    Ok(FluidInterfaceCoefficients {
        dim,
        resolution: set.resolution,
        geometry_hash: set.geometry_hash.clone(),
        tol: set.tol,
        b,
        l,
        k,
        m,
        l_gamma,
    })
}

/// Membrane-scale velocity for one interface sample:
/// `v0^M = sum_i dt_u0^i q_i^Gamma + sum_{side,i} v0^side_i q_i^side`.
/// Returns the full face field and the boundary data realizing its traces.
pub fn reconstruct_membrane_velocity(
    set: &StokesCellSolutionSet,
    dt_u0: &[f64],
    v_plus: &[f64],
    v_minus: &[f64],
) -> Result<(Vec<f64>, BoundaryData)> {
    let dim = set.dim;
    if dt_u0.len() != dim || v_plus.len() != dim || v_minus.len() != dim {
        return Err(Error::Shape(format!(
            "membrane reconstruction needs {dim}-vectors"
        )));
    }
    let n = set.q_vert.velocity.len();
    let mut field = vec![0.0; n];
    let mut data = BoundaryData::zero();
    {
        let mut add = |f: &[f64], d: &BoundaryData, c: f64| {
            if c != 0.0 {
                for (o, v) in field.iter_mut().zip(f) {
                    *o += c * v;
                }
                for comp in 0..3 {
                    data.gamma[comp] += c * d.gamma[comp];
                    data.top[comp] += c * d.top[comp];
                    data.bottom[comp] += c * d.bottom[comp];
                    data.lateral[comp] += c * d.lateral[comp];
                }
            }
        };
        for i in 0..dim {
            let (f, d) = set.gamma_field(i);
            add(&f, &d, dt_u0[i]);
        }
        for (side, values) in [(Side::Plus, v_plus), (Side::Minus, v_minus)] {
            for i in 0..dim {
                let (f, d) = set.side_field(side, i);
                add(&f, &d, values[i]);
            }
        }
    }
    Ok((field, data))
}

/// First-order membrane pressure: same combination over the cell pressures.
/// Mean zero because every constituent is.
pub fn reconstruct_membrane_pressure(
    set: &StokesCellSolutionSet,
    dt_u0: &[f64],
    v_plus: &[f64],
    v_minus: &[f64],
) -> Result<Vec<f64>> {
    let dim = set.dim;
    if dt_u0.len() != dim || v_plus.len() != dim || v_minus.len() != dim {
        return Err(Error::Shape(format!(
            "membrane reconstruction needs {dim}-vectors"
        )));
    }
    let n = set.q_vert.pressure.len();
    let mut out = vec![0.0; n];
    let add = |p: Vec<f64>, c: f64, out: &mut Vec<f64>| {
        if c != 0.0 {
            for (o, v) in out.iter_mut().zip(&p) {
                *o += c * v;
            }
        }
    };
    for i in 0..dim {
        add(set.q_gamma[i].pressure.clone(), dt_u0[i], &mut out);
    }
    for (side, values) in [(Side::Plus, v_plus), (Side::Minus, v_minus)] {
        for i in 0..dim {
            add(set.side_pressure(side, i), values[i], &mut out);
        }
    }
    Ok(out)
}

// ----- disk cache ----------------------------------------------------------

fn cache_path(dir: &Path, hash: &str) -> std::path::PathBuf {
    dir.join(format!("{hash}.stokes.json"))
}

/// Loads a cached solution set if present and consistent.
pub fn load_cached_set(dir: &Path, geom: &CellGeometry, tol: f64) -> Option<StokesCellSolutionSet> {
    let path = cache_path(dir, geom.hash());
    let text = std::fs::read_to_string(path).ok()?;
    let mut set: StokesCellSolutionSet = serde_json::from_str(&text).ok()?;
    if set.dim == geom.dim()
        && set.resolution == geom.resolution()
        && set.geometry_hash == geom.hash()
        && set.tol <= tol * (1.0 + 1e-12)
    {
        set.cache_hit = true;
        Some(set)
    } else {
        None
    }
}

pub fn store_cached_set(dir: &Path, set: &StokesCellSolutionSet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = cache_path(dir, &set.geometry_hash);
    let text = serde_json::to_string(set)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Solves with a disk cache keyed by the geometry hash.
pub fn solve_cell_problems_cached(
    geom: &CellGeometry,
    opts: &SolveOptions,
    cache_dir: Option<&Path>,
) -> Result<StokesCellSolutionSet> {
    if let Some(dir) = cache_dir {
        if let Some(set) = load_cached_set(dir, geom, opts.tol) {
            return Ok(set);
        }
    }
    let set = solve_cell_problems(geom, opts)?;
    if let Some(dir) = cache_dir {
        store_cached_set(dir, &set)?;
    }
    Ok(set)
}

/// Coefficient document written by the CLI: matrices as dim-sized rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluidCoefficientDoc {
    pub dim: usize,
    pub resolution: usize,
    pub geometry_hash: String,
    pub tol: f64,
    pub b_plus_plus: Vec<Vec<f64>>,
    pub b_plus_minus: Vec<Vec<f64>>,
    pub b_minus_plus: Vec<Vec<f64>>,
    pub b_minus_minus: Vec<Vec<f64>>,
    pub l_plus: Vec<Vec<f64>>,
    pub l_minus: Vec<Vec<f64>>,
    pub k_plus: Vec<Vec<f64>>,
    pub k_minus: Vec<Vec<f64>>,
    pub m_plus: Vec<Vec<f64>>,
    pub m_minus: Vec<Vec<f64>>,
    pub l_gamma: Vec<Vec<f64>>,
}

impl FluidCoefficientDoc {
    pub fn from_coefficients(c: &FluidInterfaceCoefficients) -> Self {
        let d = c.dim;
        FluidCoefficientDoc {
            dim: d,
            resolution: c.resolution,
            geometry_hash: c.geometry_hash.clone(),
            tol: c.tol,
            b_plus_plus: mat_to_rows(&c.b[0][0], d),
            b_plus_minus: mat_to_rows(&c.b[0][1], d),
            b_minus_plus: mat_to_rows(&c.b[1][0], d),
            b_minus_minus: mat_to_rows(&c.b[1][1], d),
            l_plus: mat_to_rows(&c.l[0], d),
            l_minus: mat_to_rows(&c.l[1], d),
            k_plus: mat_to_rows(&c.k[0], d),
            k_minus: mat_to_rows(&c.k[1], d),
            m_plus: mat_to_rows(&c.m[0], d),
            m_minus: mat_to_rows(&c.m[1], d),
            l_gamma: mat_to_rows(&c.l_gamma, d),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryDescriptor;
    use crate::grid::staggered::FaceClass;
    use crate::grid::Boundary;

    fn disc_geom(res: usize) -> CellGeometry {
        CellGeometry::build(
            2,
            res,
            &GeometryDescriptor::Ball {
                radius: 0.3,
                center: None,
            },
        )
        .unwrap()
    }

    fn solve_disc(res: usize) -> (StokesCellSolutionSet, StokesAssembly) {
        let geom = disc_geom(res);
        let set = solve_cell_problems(&geom, &SolveOptions::default()).unwrap();
        let asm = StokesAssembly::new(StaggeredGrid::for_cell(&geom).unwrap());
        (set, asm)
    }

    #[test]
    fn dirichlet_data_is_imposed_exactly() {
        let (set, asm) = solve_disc(8);
        let q = &set.q_gamma[0].velocity;
        for fid in 0..asm.grid.face_count() as u32 {
            match asm.grid.face_class(fid) {
                FaceClass::Fixed(Boundary::Top) | FaceClass::Fixed(Boundary::Bottom) => {
                    assert_eq!(q[fid as usize], 0.0);
                }
                FaceClass::Fixed(Boundary::Gamma) => {
                    let (comp, _) = asm.grid.face_decompose(fid);
                    assert_eq!(q[fid as usize], if comp == 0 { 1.0 } else { 0.0 });
                }
                _ => {}
            }
        }
        // q_plus[0] vanishes on the interface.
        let qp = &set.q_side[0][0].velocity;
        for fid in 0..asm.grid.face_count() as u32 {
            if asm.grid.face_class(fid) == FaceClass::Fixed(Boundary::Gamma) {
                assert_eq!(qp[fid as usize], 0.0);
            }
        }
    }

    #[test]
    fn dirichlet_data_is_compatible() {
        let geom = disc_geom(8);
        let asm = StokesAssembly::new(StaggeredGrid::for_cell(&geom).unwrap());
        for p in [
            CellProblem::Gamma(0),
            CellProblem::Gamma(1),
            CellProblem::Plate(Side::Plus, 0),
            CellProblem::Plate(Side::Minus, 0),
            CellProblem::Vertical,
        ] {
            assert!(
                boundary_flux(&asm, p).abs() < 1e-12,
                "problem {:?} flux {}",
                p,
                boundary_flux(&asm, p)
            );
        }
    }

    #[test]
    fn solutions_are_divergence_free() {
        let (set, _) = solve_disc(8);
        for sol in set
            .q_gamma
            .iter()
            .chain(set.q_side[0].iter())
            .chain(set.q_side[1].iter())
            .chain(std::iter::once(&set.q_vert))
        {
            assert!(sol.max_divergence < 1e-9, "div {}", sol.max_divergence);
        }
    }

    #[test]
    fn pressure_is_mean_zero() {
        let (set, _) = solve_disc(8);
        for sol in set.q_gamma.iter().chain(std::iter::once(&set.q_vert)) {
            let mean: f64 = sol.pressure.iter().sum::<f64>() / sol.pressure.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_flux_balances_through_both_plates() {
        let (set, asm) = solve_disc(8);
        let grid = &asm.grid;
        let n = grid.spec.n;
        let mut flux_top = 0.0;
        let mut flux_bottom = 0.0;
        for i0 in 0..n[0] {
            let top = grid.face_id(1, [i0, n[1], 0]);
            let bottom = grid.face_id(1, [i0, 0, 0]);
            flux_top += set.q_vert.velocity[top as usize] * grid.h();
            flux_bottom += set.q_vert.velocity[bottom as usize] * grid.h();
        }
        assert!((flux_top - flux_bottom).abs() < 1e-10);
        // Both equal |Y| because the prescribed data is e_v on the plates.
        assert!((flux_top - 1.0).abs() < 1e-12);
    }

    #[test]
    fn completeness_identity_small() {
        let (set, asm) = solve_disc(8);
        let r = completeness_residual(&set, &asm);
        assert!(r <= 1e-9, "completeness residual {r}");
    }

    #[test]
    fn coefficient_structure() {
        let (set, asm) = solve_disc(8);
        let c = assemble_fluid_coefficients(&set, &asm).unwrap();
        let d = c.dim;
        let v = d - 1;
        let tol = 10.0 * set.tol * c.scale().max(1.0);
        // L^Gamma symmetric positive diagonal.
        for i in 0..d {
            for j in 0..d {
                assert!((c.l_gamma[i][j] - c.l_gamma[j][i]).abs() <= tol);
            }
            assert!(c.l_gamma[i][i] > 0.0);
        }
        for a in 0..2 {
            for i in 0..d {
                for j in 0..d {
                    // B^{aa} symmetric; B^{+-} = (B^{-+})^T by construction.
                    assert!((c.b[a][a][i][j] - c.b[a][a][j][i]).abs() <= tol);
                    assert!((c.b[0][1][i][j] - c.b[1][0][j][i]).abs() <= 1e-15);
                }
            }
        }
        // M vanishes on vertical rows/columns and matches cross-B tangentially.
        for a in 0..2 {
            for i in 0..d {
                assert_eq!(c.m[a][i][v], 0.0);
                assert_eq!(c.m[a][v][i], 0.0);
            }
            let opp = 1 - a;
            for i in 0..v {
                for j in 0..v {
                    assert_eq!(c.m[a][i][j], c.b[a][opp][i][j]);
                }
            }
        }
        // K doubles exactly the vertical rows/columns of the same-side B.
        for a in 0..2 {
            for i in 0..d {
                for j in 0..d {
                    let factor = if i == v || j == v { 2.0 } else { 1.0 };
                    assert_eq!(c.k[a][i][j], factor * c.b[a][a][i][j]);
                }
            }
        }
    }

    #[test]
    fn coefficient_linear_identities() {
        let (set, asm) = solve_disc(8);
        let c = assemble_fluid_coefficients(&set, &asm).unwrap();
        let d = c.dim;
        let scale = c.scale();
        let tol = 1e-9 * scale;
        // L+ + L- + LGamma = 0.
        for i in 0..d {
            for j in 0..d {
                let r = c.l[0][i][j] + c.l[1][i][j] + c.l_gamma[i][j];
                assert!(r.abs() <= tol, "L-sum [{i}][{j}] = {r:e}");
            }
        }
        // L^a + sum_b (B^{ab})^T = 0.
        for a in 0..2 {
            for i in 0..d {
                for j in 0..d {
                    let r = c.l[a][i][j] + c.b[a][0][j][i] + c.b[a][1][j][i];
                    assert!(r.abs() <= tol, "LB [{a}][{i}][{j}] = {r:e}");
                }
            }
        }
        // (K^a + L^a) e_v = 0.
        let v = d - 1;
        for a in 0..2 {
            for i in 0..d {
                let r = c.k[a][i][v] + c.l[a][i][v];
                assert!(r.abs() <= tol, "KL [{a}][{i}] = {r:e}");
            }
        }
    }

    #[test]
    fn quadratic_form_is_nonnegative_and_zero_on_equal_triples() {
        let (set, asm) = solve_disc(8);
        let c = assemble_fluid_coefficients(&set, &asm).unwrap();
        let scale = c.scale();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..100 {
            let xg = [next(), next(), 0.0];
            let xp = [next(), next(), 0.0];
            let xm = [next(), next(), 0.0];
            let q = c.quadratic_form(&xg, &xp, &xm);
            assert!(q >= -1e-9 * scale, "form {q:e}");
        }
        for _ in 0..10 {
            let x = [next(), next(), 0.0];
            let q = c.quadratic_form(&x, &x, &x);
            assert!(q.abs() <= 1e-9 * scale, "equal-triple form {q:e}");
        }
    }

    #[test]
    fn reconstruction_linearity_and_traces() {
        let (set, asm) = solve_disc(8);
        let (zero, _) =
            reconstruct_membrane_velocity(&set, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        // One constant vector c reproduces the constant field c.
        let cvec = [0.4, -0.2];
        let (field, _) = reconstruct_membrane_velocity(&set, &cvec, &cvec, &cvec).unwrap();
        for fid in 0..asm.grid.face_count() as u32 {
            let (comp, _) = asm.grid.face_decompose(fid);
            let got = field[fid as usize];
            assert!(
                (got - cvec[comp]).abs() <= 1e-9,
                "face {fid} comp {comp}: {got} vs {}",
                cvec[comp]
            );
        }
        // Single mode: dt_u0 = e_v picks out q_gamma[v].
        let (field, _) =
            reconstruct_membrane_velocity(&set, &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        for (a, b) in field.iter().zip(&set.q_gamma[1].velocity) {
            assert_eq!(a, b);
        }
        // Random combination stays divergence-free.
        let (field, _) =
            reconstruct_membrane_velocity(&set, &[0.3, -0.7], &[0.2, 0.1], &[-0.4, 0.1]).unwrap();
        for dv in asm.grid.divergence(&field) {
            assert!(dv.abs() <= 1e-8);
        }
        // Pressure combination is mean zero.
        let p =
            reconstruct_membrane_pressure(&set, &[0.3, -0.7], &[0.2, 0.1], &[-0.4, 0.1]).unwrap();
        let mean: f64 = p.iter().sum::<f64>() / p.len() as f64;
        assert!(mean.abs() < 1e-11);
        // Shape errors.
        assert!(reconstruct_membrane_velocity(&set, &[0.0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn cache_roundtrip_is_exact_and_hits() {
        let geom = disc_geom(6);
        let dir = tempfile::tempdir().unwrap();
        let opts = SolveOptions::default();
        let set1 = solve_cell_problems_cached(&geom, &opts, Some(dir.path())).unwrap();
        assert!(!set1.cache_hit);
        let set2 = solve_cell_problems_cached(&geom, &opts, Some(dir.path())).unwrap();
        assert!(set2.cache_hit);
        assert_eq!(set1.q_vert.velocity, set2.q_vert.velocity);
    }
}
