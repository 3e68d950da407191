//! Small dense `f64` routines for the classical baseline: a cyclic Jacobi
//! eigensolver for symmetric matrices and a Cholesky solve for SPD systems.
//! Sizes here are tiny (channel count squared), so clarity and determinism
//! beat throughput.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}×{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("jacobi sweep limit reached before convergence (off-diagonal {off:e})")]
    NoConvergence { off: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },
}

/// Row-major square matrix view helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(LinalgError::NotSquare { rows: n, cols: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    /// C = A·B
    pub fn matmul(&self, other: &SquareMat) -> SquareMat {
        let n = self.n;
        let mut out = SquareMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                for j in 0..n {
                    out.data[i * n + j] += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SquareMat {
        let n = self.n;
        let mut out = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    worst = worst.max(self.at(i, j).abs());
                }
            }
        }
        worst
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching unit eigenvectors
/// as the columns of the returned matrix.
pub fn symmetric_eigen(a: &SquareMat) -> Result<(Vec<f64>, SquareMat), LinalgError> {
    let n = a.n;
    let mut m = a.clone();
    // symmetrize against accumulated asymmetry in the caller
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m.at(i, j) + m.at(j, i));
            m.set(i, j, avg);
            m.set(j, i, avg);
        }
    }
    let mut v = SquareMat::identity(n);
    let scale: f64 = m.data.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let tol = 1e-14 * scale;

    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m.at(p, q).abs());
            }
        }
        if off <= tol {
            let (vals, vecs) = sort_eigenpairs(&m, &v);
            return Ok((vals, vecs));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() <= tol {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                // stable tangent of the rotation angle
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(LinalgError::NoConvergence { off: m.max_off_diagonal() })
}

fn sort_eigenpairs(m: &SquareMat, v: &SquareMat) -> (Vec<f64>, SquareMat) {
    let n = m.n;
    let mut order: Vec<usize> = (0..n).collect();
    // descending by eigenvalue; ties keep the lower original index first
    order.sort_by(|&i, &j| m.at(j, j).partial_cmp(&m.at(i, i)).expect("finite").then(i.cmp(&j)));
    let vals = order.iter().map(|&i| m.at(i, i)).collect();
    let mut vecs = SquareMat::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs.set(k, dst, v.at(k, src));
        }
    }
    (vals, vecs)
}

/// Cholesky factorization `A = L·Lᵀ` of an SPD matrix; returns `L`.
pub fn cholesky(a: &SquareMat) -> Result<SquareMat, LinalgError> {
    let n = a.n;
    let mut l = SquareMat::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(LinalgError::NotPositiveDefinite { pivot: sum, index: i });
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.at(j, j));
            }
        }
    }
    Ok(l)
}

/// Solves `A·x = b` through the Cholesky factor of SPD `A`.
pub fn solve_spd(a: &SquareMat, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let l = cholesky(a)?;
    let n = a.n;
    // forward: L·y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l.at(i, k) * y[k];
        }
        y[i] = sum / l.at(i, i);
    }
    // backward: Lᵀ·x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l.at(k, i) * x[k];
        }
        x[i] = sum / l.at(i, i);
    }
    Ok(x)
}
