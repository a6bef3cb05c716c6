//! Low-rank matrix completion by alternating ridge solves over the
//! observed entries only.

use super::matrix::{dot, Matrix};
use super::ridge::{cholesky_solve, lu_solve};
use super::rng::RngStream;
use super::svd::jacobi_svd;
use crate::error::{Error, Result};

/// Default ridge term on the factor rows.
pub const DEFAULT_ALS_REG: f64 = 1e-6;

/// Value of the regularized observed-entry objective after each iteration.
#[derive(Debug, Clone, Default)]
pub struct AlsTrace {
    pub objective: Vec<f64>,
}

/// Completes `m` from the entries where `mask` is true, returning `U Vᵀ`
/// with `U`: rows×rank and `V`: cols×rank.
///
/// Each half-step solves the exact ridge problem for one factor given the
/// other, so `Σ_obs (m − uᵢ·vⱼ)² + reg (‖U‖² + ‖V‖²)` never increases.
pub fn als_complete(
    m: &Matrix,
    mask: &[bool],
    rank: usize,
    reg: f64,
    iters: usize,
    stream: &mut RngStream,
) -> Result<Matrix> {
    als_complete_traced(m, mask, rank, reg, iters, stream).map(|(c, _)| c)
}

pub fn als_complete_traced(
    m: &Matrix,
    mask: &[bool],
    rank: usize,
    reg: f64,
    iters: usize,
    stream: &mut RngStream,
) -> Result<(Matrix, AlsTrace)> {
    let (rows, cols) = (m.rows(), m.cols());
    if mask.len() != rows * cols {
        return Err(Error::dims("als_complete mask", rows * cols, mask.len()));
    }
    if rank == 0 {
        return Err(Error::InvalidArgument(
            "als_complete rank must be >= 1".into(),
        ));
    }
    if !(reg >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "als_complete reg must be >= 0, got {reg}"
        )));
    }

    // Observed column indices per row and row indices per column.
    let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); rows];
    let mut by_col: Vec<Vec<usize>> = vec![Vec::new(); cols];
    for i in 0..rows {
        for j in 0..cols {
            if mask[i * cols + j] {
                by_row[i].push(j);
                by_col[j].push(i);
            }
        }
    }
    if let Some(i) = by_row.iter().position(Vec::is_empty) {
        return Err(Error::EmptyLine {
            axis: "row",
            index: i,
        });
    }
    if let Some(j) = by_col.iter().position(Vec::is_empty) {
        return Err(Error::EmptyLine {
            axis: "column",
            index: j,
        });
    }

    let mut v = init_col_factors(m, mask, rank, stream);
    let mut u = Matrix::zeros(rows, rank);
    let mut trace = AlsTrace::default();
    let mt = m.transpose();

    for _ in 0..iters {
        solve_side(&mut u, &v, m, &by_row, reg)?;
        solve_side(&mut v, &u, &mt, &by_col, reg)?;
        let obj = objective(m, &by_row, &u, &v, reg);
        let converged = trace
            .objective
            .last()
            .is_some_and(|&prev| prev - obj <= 1e-15 * prev.max(f64::MIN_POSITIVE));
        trace.objective.push(obj);
        if converged {
            break;
        }
    }

    let completed = u.matmul(&v.transpose())?;
    Ok((completed, trace))
}

/// Seeds the column factors from the SVD of the rescaled zero-filled
/// matrix; directions with no signal are drawn from `stream`.
fn init_col_factors(m: &Matrix, mask: &[bool], rank: usize, stream: &mut RngStream) -> Matrix {
    let (rows, cols) = (m.rows(), m.cols());
    let observed = mask.iter().filter(|&&b| b).count();
    let inflate = (rows * cols) as f64 / observed as f64;
    let mut filled = m.clone();
    for (x, &keep) in filled.as_mut_slice().iter_mut().zip(mask) {
        *x = if keep { *x * inflate } else { 0.0 };
    }
    let svd = jacobi_svd(&filled);
    let top = svd.s.first().copied().unwrap_or(0.0);
    let mut v = Matrix::zeros(cols, rank);
    for k in 0..rank {
        let s = svd.s.get(k).copied().unwrap_or(0.0);
        if k < svd.s.len() && s > 1e-12 * top && s > 0.0 {
            let w = s.sqrt();
            for j in 0..cols {
                v[(j, k)] = svd.v[(j, k)] * w;
            }
        } else {
            let scale = (top.max(1.0) / cols as f64).sqrt();
            for j in 0..cols {
                v[(j, k)] = scale * stream.std_normal();
            }
        }
    }
    v
}

/// For every row `i` of `target`, solves the ridge problem against the
/// observed entries `data[i, observed[i]]` with fixed factors `other`.
fn solve_side(
    target: &mut Matrix,
    other: &Matrix,
    data: &Matrix,
    observed: &[Vec<usize>],
    reg: f64,
) -> Result<()> {
    let r = other.cols();
    let mut g = Matrix::zeros(r, r);
    let mut b = vec![0.0; r];
    for (i, idx) in observed.iter().enumerate() {
        g.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
        b.iter_mut().for_each(|x| *x = 0.0);
        let row = data.row(i);
        for &j in idx {
            let f = other.row(j);
            let y = row[j];
            for a in 0..r {
                b[a] += f[a] * y;
                for c in a..r {
                    g[(a, c)] += f[a] * f[c];
                }
            }
        }
        for a in 0..r {
            g[(a, a)] += reg;
            for c in 0..a {
                g[(a, c)] = g[(c, a)];
            }
        }
        let sol = match cholesky_solve(&g, &b) {
            Ok(s) => s,
            Err(_) => lu_solve(&g, &b)?,
        };
        target.row_mut(i).copy_from_slice(&sol);
    }
    Ok(())
}

fn objective(m: &Matrix, by_row: &[Vec<usize>], u: &Matrix, v: &Matrix, reg: f64) -> f64 {
    let mut sse = 0.0;
    for (i, idx) in by_row.iter().enumerate() {
        for &j in idx {
            let e = m[(i, j)] - dot(u.row(i), v.row(j));
            sse += e * e;
        }
    }
    let penalty = u
        .as_slice()
        .iter()
        .chain(v.as_slice())
        .map(|x| x * x)
        .sum::<f64>();
    sse + reg * penalty
}
