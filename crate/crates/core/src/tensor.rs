//! Small dense matrix and rank-4 tensor helpers for the effective
//! coefficients. Everything is stored in fixed 3-sized arrays with only the
//! leading `dim` (or `dim - 1`) entries in use.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub fn mat_zero() -> Mat3 {
    [[0.0; 3]; 3]
}

pub fn matvec(m: &Mat3, v: &[f64; 3], dim: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..dim {
        for j in 0..dim {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

pub fn mat_transpose(m: &Mat3, dim: usize) -> Mat3 {
    let mut out = mat_zero();
    for i in 0..dim {
        for j in 0..dim {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn mat_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = mat_zero();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] + b[i][j];
        }
    }
    out
}

pub fn mat_inf_norm(m: &Mat3, dim: usize) -> f64 {
    let mut best: f64 = 0.0;
    for row in m.iter().take(dim) {
        let s: f64 = row.iter().take(dim).map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

pub fn mat_max_abs(m: &Mat3, dim: usize) -> f64 {
    let mut best: f64 = 0.0;
    for row in m.iter().take(dim) {
        for v in row.iter().take(dim) {
            best = best.max(v.abs());
        }
    }
    best
}

pub fn dot3(a: &[f64; 3], b: &[f64; 3], dim: usize) -> f64 {
    (0..dim).map(|i| a[i] * b[i]).sum()
}

/// Serializes the used dim x dim block as nested rows.
pub fn mat_to_rows(m: &Mat3, dim: usize) -> Vec<Vec<f64>> {
    m.iter()
        .take(dim)
        .map(|row| row.iter().take(dim).copied().collect())
        .collect()
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<(Mat3, usize)> {
    let dim = rows.len();
    if !(1..=3).contains(&dim) {
        return Err(Error::Format(format!("matrix must be 1x1..3x3, got {dim} rows")));
    }
    let mut m = mat_zero();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::Format("matrix rows must be square".into()));
        }
        for (j, &v) in row.iter().enumerate() {
            m[i][j] = v;
        }
    }
    Ok((m, dim))
}

/// Rank-4 tensor over the in-plane indices (dim - 1 of them, at most 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InPlaneTensor {
    /// Number of in-plane directions (1 in the reduced 2d mode, 2 in 3d).
    pub m: usize,
    pub a: [[[[f64; 2]; 2]; 2]; 2],
}

impl InPlaneTensor {
    pub fn zero(m: usize) -> Self {
        InPlaneTensor {
            m,
            a: [[[[0.0; 2]; 2]; 2]; 2],
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.a[i][j][k][l]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.a[i][j][k][l] = v;
    }

    /// (T E)_{ij} = T_{ijkl} E_{kl} over the in-plane block.
    pub fn apply(&self, e: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for i in 0..self.m {
            for j in 0..self.m {
                for k in 0..self.m {
                    for l in 0..self.m {
                        out[i][j] += self.a[i][j][k][l] * e[k][l];
                    }
                }
            }
        }
        out
    }

    /// Quadratic/bilinear form T E : F.
    pub fn form(&self, e: &[[f64; 2]; 2], f: &[[f64; 2]; 2]) -> f64 {
        let te = self.apply(e);
        let mut acc = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                acc += te[i][j] * f[i][j];
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                for k in 0..self.m {
                    for l in 0..self.m {
                        best = best.max(self.a[i][j][k][l].abs());
                    }
                }
            }
        }
        best
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.m)
            .map(|i| {
                (0..self.m)
                    .map(|j| {
                        (0..self.m)
                            .map(|k| (0..self.m).map(|l| self.a[i][j][k][l]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn from_nested(data: &[Vec<Vec<Vec<f64>>>]) -> Result<Self> {
        let m = data.len();
        if !(1..=2).contains(&m) {
            return Err(Error::Format("in-plane tensor must have 1 or 2 directions".into()));
        }
        let mut t = InPlaneTensor::zero(m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        t.a[i][j][k][l] = data[i][j][k][l];
                    }
                }
            }
        }
        Ok(t)
    }
}
