//! Dense helpers for the small matrices this crate works with: Cholesky and
//! LU factorizations, least squares via the normal equations, and a Jacobi
//! eigenvalue sweep used for condition estimates. Everything here is plain
//! cubic arithmetic; the matrices are never larger than a few dozen rows.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower-triangular L with m = L·Lᵀ. None if a pivot drops below `floor`.
pub fn cholesky(m: &Array2<f64>, floor: f64) -> Option<Array2<f64>> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > floor) || !diag.is_finite() {
            return None;
        }
        let dsqrt = diag.sqrt();
        l[(j, j)] = dsqrt;
        for i in (j + 1)..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / dsqrt;
        }
    }
    Some(l)
}

/// Solve m·x = b for symmetric positive definite m.
pub fn cholesky_solve(m: &Array2<f64>, b: &Array1<f64>, floor: f64) -> Option<Array1<f64>> {
    let l = cholesky(m, floor)?;
    Some(cholesky_solve_factored(&l, b))
}

/// Solve (L·Lᵀ)x = b given the Cholesky factor L.
pub fn cholesky_solve_factored(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[(i, k)] * v;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = y[k];
            y[i] -= l[(k, i)] * v;
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// LU factorization with partial pivoting, stored in place.
pub struct Lu {
    lu: Array2<f64>,
    perm: Vec<usize>,
    sign_flips: usize,
}

impl Lu {
    pub fn new(m: &Array2<f64>) -> Option<Lu> {
        let n = m.nrows();
        debug_assert_eq!(n, m.ncols());
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign_flips = 0usize;
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_abs = lu[(col, col)].abs();
            for r in (col + 1)..n {
                let a = lu[(r, col)].abs();
                if a > pivot_abs {
                    pivot_abs = a;
                    pivot_row = r;
                }
            }
            if !(pivot_abs > 0.0) || !pivot_abs.is_finite() {
                return None;
            }
            if pivot_row != col {
                for c in 0..n {
                    lu.swap((col, c), (pivot_row, c));
                }
                perm.swap(col, pivot_row);
                sign_flips += 1;
            }
            let pivot = lu[(col, col)];
            for r in (col + 1)..n {
                let f = lu[(r, col)] / pivot;
                lu[(r, col)] = f;
                for c in (col + 1)..n {
                    let v = lu[(col, c)];
                    lu[(r, c)] -= f * v;
                }
            }
        }
        Some(Lu {
            lu,
            perm,
            sign_flips,
        })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.lu.nrows();
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut v = b[self.perm[i]];
            for k in 0..i {
                v -= self.lu[(i, k)] * y[k];
            }
            y[i] = v;
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let v = y[k];
                y[i] -= self.lu[(i, k)] * v;
            }
            y[i] /= self.lu[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.lu.nrows();
        let mut inv = Array2::<f64>::zeros((n, n));
        let mut e = Array1::<f64>::zeros(n);
        for c in 0..n {
            e.fill(0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..n {
                inv[(r, c)] = col[r];
            }
        }
        inv
    }

    pub fn det(&self) -> f64 {
        let mut d = if self.sign_flips % 2 == 0 { 1.0 } else { -1.0 };
        for i in 0..self.lu.nrows() {
            d *= self.lu[(i, i)];
        }
        d
    }
}

/// Full inverse through LU; this is the fresh-inversion reference everywhere.
pub fn invert(m: &Array2<f64>) -> Result<Array2<f64>> {
    Lu::new(m)
        .map(|lu| lu.inverse())
        .ok_or_else(|| Error::SingularMatrix {
            context: "invert".into(),
        })
}

pub fn solve(m: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    Lu::new(m)
        .map(|lu| lu.solve(b))
        .ok_or_else(|| Error::SingularMatrix {
            context: "solve".into(),
        })
}

/// Least squares argmin ‖c·x − d‖₂ via the normal equations; a relative ridge
/// is escalated a few times if the Gram matrix is numerically semidefinite.
pub fn lstsq(c: &Array2<f64>, d: &Array1<f64>) -> Result<Array1<f64>> {
    let dim = c.ncols();
    let gram = c.t().dot(c);
    let rhs = c.t().dot(d);
    let trace: f64 = (0..dim).map(|i| gram[(i, i)]).sum();
    let base = if trace > 0.0 { trace / dim as f64 } else { 1.0 };
    let mut ridge = 0.0_f64;
    for _ in 0..6 {
        let mut m = gram.clone();
        for i in 0..dim {
            m[(i, i)] += ridge;
        }
        if let Some(x) = cholesky_solve(&m, &rhs, 0.0) {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        ridge = if ridge == 0.0 {
            base * 1e-14
        } else {
            ridge * 100.0
        };
    }
    Err(Error::SingularMatrix {
        context: "lstsq normal equations".into(),
    })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    // Symmetrize defensively; callers pass Gram matrices.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = cos * akp - sin * akq;
                    a[(k, q)] = sin * akp + cos * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = cos * apk - sin * aqk;
                    a[(q, k)] = sin * apk + cos * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

/// λ_max/λ_min of a symmetric positive semidefinite matrix (∞ if λ_min ≤ 0).
pub fn spd_condition(m: &Array2<f64>) -> f64 {
    let eig = sym_eigenvalues(m);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition number of a rectangular matrix, σ_max/σ_min via the Gram matrix.
pub fn matrix_condition(c: &Array2<f64>) -> f64 {
    spd_condition(&c.t().dot(c)).sqrt()
}
