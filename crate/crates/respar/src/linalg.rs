//! Dense kernels shared across the crate: matrix-vector products with a fixed
//! summation order (so every run is bit-reproducible at any worker count),
//! norms, a Cholesky solver for the n×n Gram system, and a cyclic Jacobi
//! eigensolver for symmetric matrices.
//!
//! Matrices are `ndarray` arrays in standard (row-major) layout; `n` stays in
//! the hundreds at desk scale so the O(n³) factorizations here are cheap next
//! to the O(n·d) training matvecs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::Float;

#[derive(Debug, Error)]
pub enum LinalgError {
    /// Cholesky hit a non-positive pivot: the matrix is not (numerically)
    /// positive definite.
    #[error("non-positive pivot {pivot} at index {index} during Cholesky factorization")]
    NotPositiveDefinite { index: usize, pivot: f64 },
}

/// `x · v` for a row-major matrix: one contiguous dot per row.
pub fn mat_vec<F: Float>(x: ArrayView2<F>, v: ArrayView1<F>) -> Array1<F> {
    let mut out = Array1::zeros(x.nrows());
    mat_vec_into(x, v, &mut out);
    out
}

/// `mat_vec` writing into a caller-owned buffer; the training loop reuses
/// its buffers across hundreds of thousands of steps.
pub fn mat_vec_into<F: Float>(x: ArrayView2<F>, v: ArrayView1<F>, out: &mut Array1<F>) {
    debug_assert_eq!(x.ncols(), v.len());
    debug_assert_eq!(x.nrows(), out.len());
    for (o, row) in out.iter_mut().zip(x.rows()) {
        *o = row.dot(&v);
    }
}

/// `xᵀ · r` computed as a sum of scaled rows, streaming `x` once in row order.
pub fn mat_t_vec<F: Float>(x: ArrayView2<F>, r: ArrayView1<F>) -> Array1<F> {
    let mut out = Array1::zeros(x.ncols());
    mat_t_vec_into(x, r, &mut out);
    out
}

/// `mat_t_vec` writing into a caller-owned buffer.
pub fn mat_t_vec_into<F: Float>(x: ArrayView2<F>, r: ArrayView1<F>, out: &mut Array1<F>) {
    debug_assert_eq!(x.nrows(), r.len());
    debug_assert_eq!(x.ncols(), out.len());
    out.fill(F::zero());
    let o = out
        .as_slice_mut()
        .expect("output buffer must be contiguous");
    for (&ri, row) in r.iter().zip(x.rows()) {
        let row = row
            .to_slice()
            .expect("row of a standard-layout matrix is contiguous");
        for (oj, &xj) in o.iter_mut().zip(row) {
            *oj += ri * xj;
        }
    }
}

/// The n×n Gram matrix `x xᵀ`.
pub fn gram<F: Float>(x: ArrayView2<F>) -> Array2<F> {
    let n = x.nrows();
    let mut g = Array2::zeros((n, n));
    for i in 0..n {
        let ri = x.row(i);
        for j in i..n {
            let v = ri.dot(&x.row(j));
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    g
}

pub fn dot<F: Float>(a: ArrayView1<F>, b: ArrayView1<F>) -> F {
    a.dot(&b)
}

pub fn l2_norm<F: Float>(v: ArrayView1<F>) -> F {
    v.dot(&v).sqrt()
}

pub fn inf_norm<F: Float>(v: ArrayView1<F>) -> F {
    v.iter().fold(F::zero(), |m, &x| m.max(x.abs()))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<F: Float>(a: ArrayView2<F>) -> Result<Array2<F>, LinalgError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut l: Array2<F> = Array2::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= F::zero() {
            return Err(LinalgError::NotPositiveDefinite {
                index: j,
                pivot: diag.to_f64().unwrap_or(f64::NAN),
            });
        }
        let djj = diag.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `(L Lᵀ) x = b` given the Cholesky factor `L`.
pub fn cholesky_solve<F: Float>(l: ArrayView2<F>, b: ArrayView1<F>) -> Array1<F> {
    let n = l.nrows();
    assert_eq!(b.len(), n, "right-hand side length mismatch");
    let mut y = b.to_owned();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Converges quadratically once the off-diagonal mass is small; 30 sweeps is
/// far beyond what the well-conditioned Gram matrices here need.
pub fn symmetric_eigenvalues<F: Float>(a: ArrayView2<F>) -> Vec<F> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigensolve needs a square matrix");
    let mut m = a.to_owned();
    if n == 1 {
        return vec![m[[0, 0]]];
    }
    let frob = m.iter().fold(F::zero(), |s, &x| s + x * x).sqrt();
    let tol = F::cast(1e-30) * frob.max(F::one());
    for _sweep in 0..30 {
        let mut off = F::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == F::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (F::cast(2.0) * apq);
                let t = {
                    let sign = if theta >= F::zero() {
                        F::one()
                    } else {
                        -F::one()
                    };
                    sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<F> = (0..n).map(|i| m[[i, i]]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    eig
}
