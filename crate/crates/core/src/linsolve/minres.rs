//! Preconditioned MINRES for symmetric (possibly indefinite) systems,
//! following the classic Paige-Saunders recurrences. The preconditioner must
//! be symmetric positive definite: either a positive diagonal or a general
//! apply (used for block preconditioners with an exact velocity-block solve).
//! A known nullspace can be projected out on the fly.

use super::cg::{project_out_kernel, IterResult};
use super::csr::{dot, norm2, Csr};

/// SPD preconditioner for MINRES.
pub enum Precond<'a> {
    Identity,
    Diag(&'a [f64]),
    Apply(&'a dyn Fn(&[f64], &mut [f64])),
}

impl Precond<'_> {
    fn apply(&self, r: &[f64], y: &mut [f64]) {
        match self {
            Precond::Identity => y.copy_from_slice(r),
            Precond::Diag(d) => {
                for i in 0..r.len() {
                    y[i] = if d[i] > 0.0 { r[i] / d[i] } else { r[i] };
                }
            }
            Precond::Apply(f) => f(r, y),
        }
    }
}

pub fn minres(
    a: &Csr,
    b: &[f64],
    precond: &Precond,
    kernel: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
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
    let mut x = vec![0.0f64; n];
    let mut r1 = b.to_vec();
    project_out_kernel(&mut r1, kernel);
    let mut y = vec![0.0f64; n];
    precond.apply(&r1, &mut y);
    let beta1 = dot(&r1, &y);
    if beta1 <= 0.0 {
        return IterResult {
            x,
            iterations: 0,
            residual: if beta1 == 0.0 { 0.0 } else { f64::NAN },
            converged: beta1 == 0.0,
        };
    }
    let beta1 = beta1.sqrt();

    let mut r2 = r1.clone();
    let mut w = vec![0.0f64; n];
    let mut w2 = vec![0.0f64; n];
    let mut oldb = 0.0f64;
    let mut beta = beta1;
    let mut dbar = 0.0f64;
    let mut epsln = 0.0f64;
    let mut phibar = beta1;
    let mut cs = -1.0f64;
    let mut sn = 0.0f64;
    let mut v = vec![0.0f64; n];
    let mut ay = vec![0.0f64; n];

    let mut it = 0usize;
    while it < max_iter {
        it += 1;
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        a.matvec_into(&v, &mut ay);
        project_out_kernel(&mut ay, kernel);
        y.copy_from_slice(&ay);
        if it >= 2 {
            let c = beta / oldb;
            for i in 0..n {
                y[i] -= c * r1[i];
            }
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        for i in 0..n {
            y[i] -= c * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        precond.apply(&r2, &mut y);
        oldb = beta;
        let beta_sq = dot(&r2, &y);
        if beta_sq < 0.0 || !beta_sq.is_finite() {
            break;
        }
        beta = beta_sq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1i = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1i - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }

        if phibar <= tol * beta1 {
            break;
        }
    }
    project_out_kernel(&mut x, kernel);
    // Report the true (unpreconditioned) relative residual.
    let mut r = vec![0.0; n];
    a.matvec_into(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    project_out_kernel(&mut r, kernel);
    let res = norm2(&r) / bnorm;
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
    fn minres_solves_indefinite_system() {
        // [[2, 1], [1, -3]] is symmetric indefinite.
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 2.0);
        t.push(0, 1, 1.0);
        t.push(1, 0, 1.0);
        t.push(1, 1, -3.0);
        let a = t.to_csr();
        let x_true = [0.5, -1.5];
        let b = a.matvec(&x_true);
        let out = minres(&a, &b, &Precond::Diag(&[2.0, 3.0]), &[], 1e-14, 50);
        assert!(out.converged);
        for (x, e) in out.x.iter().zip(&x_true) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn minres_saddle_point_toy() {
        // [[I, B^T], [B, 0]] with B = [1, 1].
        let mut t = Triplets::new(3, 3);
        t.push(0, 0, 1.0);
        t.push(1, 1, 1.0);
        t.push(0, 2, 1.0);
        t.push(1, 2, 1.0);
        t.push(2, 0, 1.0);
        t.push(2, 1, 1.0);
        let a = t.to_csr();
        let b = vec![1.0, 0.0, 0.0];
        let out = minres(&a, &b, &Precond::Identity, &[], 1e-13, 100);
        assert!(out.converged);
        // Exact solution: u = (1/2, -1/2), p = 1/2.
        assert!((out.x[0] - 0.5).abs() < 1e-11);
        assert!((out.x[1] + 0.5).abs() < 1e-11);
        assert!((out.x[2] - 0.5).abs() < 1e-11);
    }
}
