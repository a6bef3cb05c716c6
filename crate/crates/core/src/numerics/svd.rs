//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Rotations act on the columns of the orientation whose Gram matrix is the
//! smaller one, so the cost is O(sweeps · min(r,c)² · max(r,c)).

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// `m = u · diag(s) · vᵀ` with `s` descending; `u` is rows×k, `v` is cols×k,
/// k = min(rows, cols). Columns of `u` for zero singular values are zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

pub fn jacobi_svd(m: &Matrix) -> Svd {
    if m.rows() < m.cols() {
        let t = jacobi_svd(&m.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (n, p) = (m.rows(), m.cols());
    // cols[i] holds column i of the working matrix contiguously.
    let mut cols = m.transpose();
    let mut vt = Matrix::identity(p);
    let eps = f64::EPSILON;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let (alpha, beta, gamma) = {
                    let ci = cols.row(i);
                    let cj = cols.row(j);
                    (dot(ci, ci), dot(cj, cj), dot(ci, cj))
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut cols, i, j, c, s);
                rotate_rows(&mut vt, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..p)
        .map(|i| dot(cols.row(i), cols.row(i)).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut u = Matrix::zeros(n, p);
    let mut v = Matrix::zeros(p, p);
    let mut s = Vec::with_capacity(p);
    for (k, &idx) in order.iter().enumerate() {
        let sigma = norms[idx];
        s.push(sigma);
        if sigma > 0.0 {
            for (r, &val) in cols.row(idx).iter().enumerate() {
                u[(r, k)] = val / sigma;
            }
        }
        for (r, &val) in vt.row(idx).iter().enumerate() {
            v[(r, k)] = val;
        }
    }
    Svd { u, s, v }
}

fn rotate_rows(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(j * cols);
    let ri = &mut head[i * cols..(i + 1) * cols];
    let rj = &mut tail[..cols];
    for (a, b) in ri.iter_mut().zip(rj.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Top-`k` singular values, descending.
pub fn singular_values(m: &Matrix, k: usize) -> Result<Vec<f64>> {
    let max_k = m.rows().min(m.cols());
    if k > max_k {
        return Err(Error::InvalidArgument(format!(
            "requested {k} singular values of a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let mut s = jacobi_svd(m).s;
    s.truncate(k);
    Ok(s)
}
