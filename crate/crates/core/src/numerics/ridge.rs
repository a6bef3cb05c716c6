//! Ridge regression through the normal equations.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Relative pivot threshold below which a factorization is declared singular.
const PIVOT_TOL: f64 = 1e-12;

/// Fitted linear model `y ≈ x·coef + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl RidgeFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.coef, x) + self.intercept
    }
}

enum Factor {
    Cholesky(Matrix),
    Lu { lu: Matrix, perm: Vec<usize> },
}

/// A factored ridge system for one design matrix, reusable across several
/// response vectors. Solving against `y` gives bit-for-bit the same result
/// as [`ridge_fit`] on `(x, y)`.
pub struct RidgeSystem {
    centered: Matrix,
    means: Vec<f64>,
    intercept: bool,
    factor: Factor,
}

impl RidgeSystem {
    pub fn new(x: &Matrix, lambda: f64, intercept: bool) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::InvalidArgument(
                "ridge_fit needs at least one row".into(),
            ));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "ridge lambda must be >= 0, got {lambda}"
            )));
        }
        let (n, p) = (x.rows(), x.cols());
        let mut centered = x.clone();
        let mut means = vec![0.0; p];
        if intercept {
            for i in 0..n {
                for (m, v) in means.iter_mut().zip(x.row(i)) {
                    *m += v;
                }
            }
            means.iter_mut().for_each(|m| *m /= n as f64);
            for i in 0..n {
                for (c, m) in centered.row_mut(i).iter_mut().zip(&means) {
                    *c -= m;
                }
            }
        }
        let mut a = centered.gram();
        for j in 0..p {
            a[(j, j)] += lambda;
        }
        let factor = match cholesky(&a) {
            Some(l) => Factor::Cholesky(l),
            None => {
                let (lu, perm) =
                    lu_factor(&a).ok_or(Error::Singular("ridge_fit normal equations"))?;
                Factor::Lu { lu, perm }
            }
        };
        Ok(RidgeSystem {
            centered,
            means,
            intercept,
            factor,
        })
    }

    pub fn solve(&self, y: &[f64]) -> Result<RidgeFit> {
        let n = self.centered.rows();
        if y.len() != n {
            return Err(Error::dims("ridge_fit", n, y.len()));
        }
        let y_mean = if self.intercept {
            y.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let rhs = self.centered.t_matvec(&yc)?;
        let coef = match &self.factor {
            Factor::Cholesky(l) => cholesky_back(l, &rhs),
            Factor::Lu { lu, perm } => lu_back(lu, perm, &rhs),
        };
        let intercept = if self.intercept {
            y_mean - dot(&self.means, &coef)
        } else {
            0.0
        };
        Ok(RidgeFit { coef, intercept })
    }
}

/// Minimizes `‖y − Xβ − b‖² + λ‖β‖²`; the intercept `b` is unpenalized
/// (and fixed at 0 when `intercept` is false).
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64, intercept: bool) -> Result<RidgeFit> {
    if y.len() != x.rows() {
        return Err(Error::dims("ridge_fit", x.rows(), y.len()));
    }
    RidgeSystem::new(x, lambda, intercept)?.solve(y)
}

fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_TOL * scale) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn cholesky_back(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut z = b.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[(k, i)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

fn lu_factor(a: &Matrix) -> Option<(Matrix, Vec<usize>)> {
    let n = a.rows();
    let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (piv, best) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if !(best > PIVOT_TOL * scale) {
            return None;
        }
        if piv != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = tmp;
            }
            perm.swap(k, piv);
        }
        for i in k + 1..n {
            let f = lu[(i, k)] / lu[(k, k)];
            lu[(i, k)] = f;
            for j in k + 1..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
        }
    }
    Some((lu, perm))
}

fn lu_back(lu: &Matrix, perm: &[usize], b: &[f64]) -> Vec<f64> {
    let n = lu.rows();
    let mut z: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for k in 0..i {
            z[i] -= lu[(i, k)] * z[k];
        }
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= lu[(i, k)] * z[k];
        }
        z[i] /= lu[(i, i)];
    }
    z
}

fn check_square(op: &'static str, a: &Matrix, b: &[f64]) -> Result<()> {
    if a.rows() != a.cols() || b.len() != a.rows() {
        return Err(Error::dims(
            op,
            "square system with matching rhs",
            format!("{}x{} with rhs {}", a.rows(), a.cols(), b.len()),
        ));
    }
    Ok(())
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_square("cholesky_solve", a, b)?;
    let l = cholesky(a).ok_or(Error::Singular("cholesky_solve"))?;
    Ok(cholesky_back(&l, b))
}

/// Solves `a x = b` by LU with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_square("lu_solve", a, b)?;
    let (lu, perm) = lu_factor(a).ok_or(Error::Singular("lu_solve"))?;
    Ok(lu_back(&lu, &perm, b))
}
