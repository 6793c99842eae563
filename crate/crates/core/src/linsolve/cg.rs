//! Conjugate gradients with Jacobi preconditioning and optional projection
//! against a known nullspace (mean-zero pinning for singular SPD systems).

use super::csr::{axpy, dot, norm2, Csr};

pub struct IterResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Removes the components of `x` along the (orthonormal) kernel vectors.
pub fn project_out_kernel(x: &mut [f64], kernel: &[Vec<f64>]) {
    for k in kernel {
        let c = dot(x, k);
        axpy(-c, k, x);
    }
}

pub fn pcg(
    a: &Csr,
    b: &[f64],
    diag_precond: &[f64],
    kernel: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
    x0: Option<&[f64]>,
) -> IterResult {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return IterResult {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let inv_diag: Vec<f64> = diag_precond
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    a.matvec_into(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    project_out_kernel(&mut r, kernel);

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm2(&r) / bnorm;
    let mut it = 0;
    while res > tol && it < max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        project_out_kernel(&mut r, kernel);
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm2(&r) / bnorm;
        it += 1;
    }
    project_out_kernel(&mut x, kernel);
    IterResult {
        x,
        iterations: it,
        residual: res,
        converged: res <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::csr::Triplets;

    #[test]
    fn cg_solves_identity_in_one_pass() {
        let mut t = Triplets::new(3, 3);
        for i in 0..3 {
            t.push(i, i, 1.0);
        }
        let a = t.to_csr();
        let b = vec![1.0, -2.0, 3.0];
        let out = pcg(&a, &b, &a.diag(), &[], 1e-14, 10, None);
        assert!(out.converged);
        assert!(out.iterations <= 1);
        for (x, e) in out.x.iter().zip(&b) {
            assert!((x - e).abs() < 1e-13);
        }
    }

    #[test]
    fn cg_singular_laplacian_with_projection() {
        // 1D periodic Laplacian (singular, kernel = constants).
        let n = 16;
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            t.push(i, (i + 1) % n, -1.0);
            t.push(i, (i + n - 1) % n, -1.0);
        }
        let a = t.to_csr();
        let kern = vec![vec![1.0 / (n as f64).sqrt(); n]];
        // RHS: eigenvector sin(2 pi i / n) with eigenvalue 2 - 2 cos(2 pi / n).
        let b: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
            .collect();
        let lambda = 2.0 - 2.0 * (2.0 * std::f64::consts::PI / n as f64).cos();
        let out = pcg(&a, &b, &a.diag(), &kern, 1e-13, 200, None);
        assert!(out.converged);
        for (xi, bi) in out.x.iter().zip(&b) {
            assert!((xi - bi / lambda).abs() < 1e-10);
        }
    }
}
