//! Sparse linear algebra for the saddle-point (Stokes) and SPD (elasticity,
//! plate) systems. Two interchangeable paths: a direct sparse LU used for
//! small and medium systems and as the ground-truth oracle, and iterative
//! solvers (CG for SPD, MINRES with block-diagonal preconditioning for the
//! symmetric indefinite saddle systems).
//!
//! Gauge handling: singular systems declare their nullspace explicitly
//! (constant pressure, rigid translations). Iterative paths project it out
//! during the iteration; the direct path solves a symmetric bordered system
//! with one Lagrange row per kernel vector. Returned solutions are always
//! orthogonal to the declared kernel, so re-projection is a no-op.

mod cg;
mod csr;
mod lu;
mod minres;

pub use cg::{pcg, project_out_kernel, IterResult};
pub use csr::{axpy, dot, norm2, Csr, Triplets};
pub use lu::SparseLu;
pub use minres::{minres, Precond};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Systems at most this large default to the direct path.
pub const DIRECT_LIMIT: usize = 200_000;

/// How a compatibility defect relates to the requested tolerance before the
/// right-hand side is rejected as inconsistent.
pub const RHS_COMPAT_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Method {
    #[default]
    Auto,
    Direct,
    Iterative,
}

/// Bookkeeping about the constraints already eliminated during assembly.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstraintInfo {
    /// Number of Dirichlet degrees of freedom eliminated.
    pub dirichlet_dofs: usize,
    /// Whether periodic identification was applied to the layout.
    pub periodic_identified: bool,
    /// Whether the assembled operator has the constant-pressure nullspace.
    pub pressure_nullspace: bool,
}

/// Assembled linear system with optional explicit nullspace.
pub struct SparseSystem {
    pub mat: Csr,
    pub rhs: Vec<f64>,
    pub symmetric: bool,
    /// Orthonormal basis of the known kernel (empty for regular systems).
    pub kernel: Vec<Vec<f64>>,
    /// Positive diagonal used by the iterative preconditioners. Defaults to
    /// |diag(A)| when absent.
    pub precond_diag: Option<Vec<f64>>,
    pub constraints: ConstraintInfo,
    /// For saddle systems: number of leading velocity unknowns.
    pub n_velocity: usize,
}

impl SparseSystem {
    pub fn new(mat: Csr, rhs: Vec<f64>) -> Self {
        SparseSystem {
            mat,
            rhs,
            symmetric: true,
            kernel: Vec::new(),
            precond_diag: None,
            constraints: ConstraintInfo::default(),
            n_velocity: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.mat.n_rows
    }

    fn precond(&self) -> Vec<f64> {
        match &self.precond_diag {
            Some(d) => d.clone(),
            None => {
                let mut d: Vec<f64> = self.mat.diag().iter().map(|v| v.abs()).collect();
                let dmax = d.iter().cloned().fold(0.0, f64::max).max(1e-300);
                for v in d.iter_mut() {
                    if *v <= 0.0 {
                        *v = dmax;
                    }
                }
                d
            }
        }
    }

    /// Dumps the matrix in MatrixMarket coordinate format.
    pub fn dump_matrix_market(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.mat.write_matrix_market(std::io::BufWriter::new(file))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveStats {
    pub method: String,
    pub iterations: usize,
    pub residual: f64,
    pub refinements: usize,
    pub unknowns: usize,
}

fn check_rhs_compatibility(sys: &SparseSystem, tol: f64) -> Result<()> {
    if sys.kernel.is_empty() {
        return Ok(());
    }
    let bnorm = norm2(&sys.rhs).max(1e-300);
    for k in &sys.kernel {
        let c = dot(k, &sys.rhs).abs() / bnorm;
        if c > RHS_COMPAT_FACTOR * tol {
            return Err(Error::IncompatibleRhs {
                kernel_component: c,
                limit: RHS_COMPAT_FACTOR * tol,
            });
        }
    }
    Ok(())
}

fn true_residual(sys: &SparseSystem, x: &[f64]) -> f64 {
    let bnorm = norm2(&sys.rhs);
    if bnorm == 0.0 {
        return 0.0;
    }
    let mut r = sys.mat.matvec(x);
    for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
        *ri = bi - *ri;
    }
    project_out_kernel(&mut r, &sys.kernel);
    norm2(&r) / bnorm
}

/// Direct solve. Singular systems with a declared kernel are regularized by
/// pinning one degree of freedom per kernel vector (the entry of largest
/// magnitude), solved, and projected back onto the kernel-orthogonal
/// complement; for a compatible right-hand side this returns the same
/// mean-zero representative a symmetric Lagrange construction would, without
/// introducing a dense constraint row into the factorization.
fn solve_direct(sys: &SparseSystem) -> Result<Vec<f64>> {
    let n = sys.n();
    let mut pinned: Vec<usize> = Vec::new();
    for k in &sys.kernel {
        let mut best = usize::MAX;
        let mut best_abs = -1.0;
        for (i, &v) in k.iter().enumerate() {
            if !pinned.contains(&i) && v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        pinned.push(best);
    }
    let lu = if pinned.is_empty() {
        SparseLu::factor(&sys.mat)?
    } else {
        let mut t = Triplets::new(n, n);
        for r in 0..n {
            if pinned.contains(&r) {
                continue;
            }
            for (c, v) in sys.mat.row(r) {
                if !pinned.contains(&c) {
                    t.push(r, c, v);
                }
            }
        }
        for &i in &pinned {
            t.push(i, i, 1.0);
        }
        SparseLu::factor(&t.to_csr())?
    };
    let solve_one = |b: &[f64]| -> Vec<f64> {
        if pinned.is_empty() {
            lu.solve(b)
        } else {
            let mut bb = b.to_vec();
            project_out_kernel(&mut bb, &sys.kernel);
            for &i in &pinned {
                bb[i] = 0.0;
            }
            let mut x = lu.solve(&bb);
            project_out_kernel(&mut x, &sys.kernel);
            x
        }
    };
    let mut x = solve_one(&sys.rhs);
    // One step of iterative refinement keeps the true residual near
    // round-off even for ill-conditioned saddle systems.
    let mut r = sys.mat.matvec(&x);
    for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
        *ri = bi - *ri;
    }
    project_out_kernel(&mut r, &sys.kernel);
    let dx = solve_one(&r);
    axpy(1.0, &dx, &mut x);
    project_out_kernel(&mut x, &sys.kernel);
    Ok(x)
}

fn pick_direct(sys: &SparseSystem, method: Method) -> bool {
    match method {
        Method::Direct => true,
        Method::Iterative => false,
        Method::Auto => sys.n() <= DIRECT_LIMIT,
    }
}

/// Solves a symmetric positive (semi-)definite system.
pub fn solve_spd(
    sys: &SparseSystem,
    tol: f64,
    max_iter: usize,
    method: Method,
) -> Result<(Vec<f64>, SolveStats)> {
    check_rhs_compatibility(sys, tol)?;
    if norm2(&sys.rhs) == 0.0 {
        return Ok((
            vec![0.0; sys.n()],
            SolveStats {
                method: "zero-rhs".into(),
                iterations: 0,
                residual: 0.0,
                refinements: 0,
                unknowns: sys.n(),
            },
        ));
    }
    if pick_direct(sys, method) {
        let x = solve_direct(sys)?;
        let res = true_residual(sys, &x);
        if res > tol.max(1e-12) {
            return Err(Error::NoConvergence {
                iterations: 1,
                residual: res,
                tol,
            });
        }
        return Ok((
            x,
            SolveStats {
                method: "lu".into(),
                iterations: 1,
                residual: res,
                refinements: 1,
                unknowns: sys.n(),
            },
        ));
    }
    let diag = sys.precond();
    let mut out = pcg(&sys.mat, &sys.rhs, &diag, &sys.kernel, tol, max_iter, None);
    let mut refinements = 0;
    while refinements < 2 {
        let res = true_residual(sys, &out.x);
        if res <= tol {
            out.residual = res;
            out.converged = true;
            break;
        }
        // Restart on the residual.
        let mut r = sys.mat.matvec(&out.x);
        for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
            *ri = bi - *ri;
        }
        let corr = pcg(&sys.mat, &r, &diag, &sys.kernel, tol, max_iter, None);
        axpy(1.0, &corr.x, &mut out.x);
        out.iterations += corr.iterations;
        refinements += 1;
        out.residual = true_residual(sys, &out.x);
        out.converged = out.residual <= tol;
    }
    if !out.converged {
        return Err(Error::NoConvergence {
            iterations: out.iterations,
            residual: out.residual,
            tol,
        });
    }
    let mut x = out.x;
    project_out_kernel(&mut x, &sys.kernel);
    Ok((
        x,
        SolveStats {
            method: "pcg-jacobi".into(),
            iterations: out.iterations,
            residual: out.residual,
            refinements,
            unknowns: sys.n(),
        },
    ))
}

/// Extracts the leading `n_v` x `n_v` block of a saddle matrix (the
/// symmetric positive definite velocity block).
pub fn velocity_block(mat: &Csr, n_v: usize) -> Csr {
    let mut t = Triplets::new(n_v, n_v);
    for r in 0..n_v {
        for (c, v) in mat.row(r) {
            if c < n_v {
                t.push(r, c, v);
            }
        }
    }
    t.to_csr()
}

/// Solves a symmetric indefinite (saddle-point) system and splits the
/// solution into its velocity and pressure parts.
///
/// The iterative path is MINRES with a block-diagonal preconditioner: an
/// exact sparse factorization of the velocity block and the pressure mass
/// diagonal. Callers solving many systems that share one velocity block can
/// pass the factorization in.
pub fn solve_saddle_with(
    sys: &SparseSystem,
    tol: f64,
    max_iter: usize,
    method: Method,
    velocity_lu: Option<&SparseLu>,
) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
    check_rhs_compatibility(sys, tol)?;
    let nv = sys.n_velocity;
    if norm2(&sys.rhs) == 0.0 {
        let stats = SolveStats {
            method: "zero-rhs".into(),
            iterations: 0,
            residual: 0.0,
            refinements: 0,
            unknowns: sys.n(),
        };
        return Ok((vec![0.0; nv], vec![0.0; sys.n() - nv], stats));
    }
    let (x, stats) = if pick_direct(sys, method) {
        let x = solve_direct(sys).map_err(|e| match e {
            Error::SingularSystem(msg) => Error::SingularBlock(msg),
            other => other,
        })?;
        let res = true_residual(sys, &x);
        if res > tol.max(1e-12) {
            return Err(Error::NoConvergence {
                iterations: 1,
                residual: res,
                tol,
            });
        }
        (
            x,
            SolveStats {
                method: "lu".into(),
                iterations: 1,
                residual: res,
                refinements: 1,
                unknowns: sys.n(),
            },
        )
    } else {
        let owned_lu;
        let vlu = match velocity_lu {
            Some(lu) => lu,
            None => {
                owned_lu = SparseLu::factor(&velocity_block(&sys.mat, nv))
                    .map_err(|e| Error::SingularBlock(e.to_string()))?;
                &owned_lu
            }
        };
        let diag = sys.precond();
        let n = sys.n();
        let apply = move |r: &[f64], y: &mut [f64]| {
            let xv = vlu.solve(&r[..nv]);
            y[..nv].copy_from_slice(&xv);
            for i in nv..n {
                y[i] = r[i] / diag[i];
            }
        };
        let precond = Precond::Apply(&apply);
        let mut out = minres(&sys.mat, &sys.rhs, &precond, &sys.kernel, tol, max_iter);
        let mut refinements = 0;
        while !out.converged && refinements < 3 {
            let mut r = sys.mat.matvec(&out.x);
            for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
                *ri = bi - *ri;
            }
            project_out_kernel(&mut r, &sys.kernel);
            let corr = minres(&sys.mat, &r, &precond, &sys.kernel, tol, max_iter);
            axpy(1.0, &corr.x, &mut out.x);
            out.iterations += corr.iterations;
            refinements += 1;
            out.residual = true_residual(sys, &out.x);
            out.converged = out.residual <= tol;
        }
        if !out.converged {
            return Err(Error::NoConvergence {
                iterations: out.iterations,
                residual: out.residual,
                tol,
            });
        }
        let mut x = out.x;
        project_out_kernel(&mut x, &sys.kernel);
        (
            x,
            SolveStats {
                method: "minres-block".into(),
                iterations: out.iterations,
                residual: out.residual,
                refinements,
                unknowns: sys.n(),
            },
        )
    };
    let (v, p) = x.split_at(nv);
    Ok((v.to_vec(), p.to_vec(), stats))
}

/// [`solve_saddle_with`] without a shared velocity factorization.
pub fn solve_saddle(
    sys: &SparseSystem,
    tol: f64,
    max_iter: usize,
    method: Method,
) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
    solve_saddle_with(sys, tol, max_iter, method, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_laplacian(n: usize) -> Csr {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            t.push(i, (i + 1) % n, -1.0);
            t.push(i, (i + n - 1) % n, -1.0);
        }
        t.to_csr()
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let mut t = Triplets::new(4, 4);
        for i in 0..4 {
            t.push(i, i, 1.0);
        }
        let sys = SparseSystem::new(t.to_csr(), vec![1.0, 2.0, 3.0, 4.0]);
        let (x, stats) = solve_spd(&sys, 1e-14, 10, Method::Iterative).unwrap();
        assert!(stats.iterations <= 1);
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn periodic_laplacian_eigenmode() {
        let n = 32;
        let a = periodic_laplacian(n);
        let b: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
            .collect();
        let lambda = 2.0 - 2.0 * (2.0 * std::f64::consts::PI / n as f64).cos();
        let mut sys = SparseSystem::new(a, b.clone());
        sys.kernel = vec![vec![1.0 / (n as f64).sqrt(); n]];
        sys.constraints.pressure_nullspace = true;
        for method in [Method::Direct, Method::Iterative] {
            let (x, _) = solve_spd(&sys, 1e-12, 2000, method).unwrap();
            for (xi, bi) in x.iter().zip(&b) {
                assert!((xi - bi / lambda).abs() < 1e-9, "method {method:?}");
            }
        }
    }

    #[test]
    fn incompatible_rhs_is_rejected() {
        let n = 8;
        let a = periodic_laplacian(n);
        let mut sys = SparseSystem::new(a, vec![1.0; n]);
        sys.kernel = vec![vec![1.0 / (n as f64).sqrt(); n]];
        let err = solve_spd(&sys, 1e-12, 100, Method::Iterative).unwrap_err();
        assert!(matches!(err, Error::IncompatibleRhs { .. }));
    }

    #[test]
    fn direct_and_iterative_agree_on_shared_system() {
        let n = 64;
        let a = periodic_laplacian(n);
        // Compatible RHS with several modes.
        let b: Vec<f64> = (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                t.sin() + 0.25 * (3.0 * t).cos()
            })
            .collect();
        let mut sys = SparseSystem::new(a, b);
        sys.kernel = vec![vec![1.0 / (n as f64).sqrt(); n]];
        let tol = 1e-12;
        let (xd, _) = solve_spd(&sys, tol, 5000, Method::Direct).unwrap();
        let (xi, _) = solve_spd(&sys, tol, 5000, Method::Iterative).unwrap();
        let diff: f64 = xd
            .iter()
            .zip(&xi)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 10.0 * tol * norm2(&xd).max(1.0), "diff {diff}");
    }

    #[test]
    fn mean_zero_projection_is_idempotent() {
        let n = 10;
        let kern = vec![vec![1.0 / (n as f64).sqrt(); n]];
        let mut x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        project_out_kernel(&mut x, &kern);
        let once = x.clone();
        project_out_kernel(&mut x, &kern);
        assert_eq!(x, once);
        let mean: f64 = x.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-13);
    }

    #[test]
    fn determinism_bitwise() {
        let n = 48;
        let a = periodic_laplacian(n);
        let b: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut sys = SparseSystem::new(a, b);
        sys.kernel = vec![vec![1.0 / (n as f64).sqrt(); n]];
        // Make RHS compatible.
        let mean: f64 = sys.rhs.iter().sum::<f64>() / n as f64;
        for v in sys.rhs.iter_mut() {
            *v -= mean;
        }
        let (x1, _) = solve_spd(&sys, 1e-12, 1000, Method::Iterative).unwrap();
        let (x2, _) = solve_spd(&sys, 1e-12, 1000, Method::Iterative).unwrap();
        assert_eq!(x1, x2);
    }
}
