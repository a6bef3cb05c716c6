//! Low-rank diagnostics for ITE matrices: singular spectra and Wold-style
//! bi-cross-validation of the effective rank.

use std::path::Path;

use serde::Serialize;

use crate::dataset::{csv_writer, fmt_real, write_record};
use crate::error::{Error, Result};
use crate::numerics::{als_complete, singular_values, Matrix, RngStream, DEFAULT_ALS_REG};

pub const DEFAULT_FOLDS: usize = 5;
/// ALS sweeps per completion.
pub const BCV_ALS_ITERS: usize = 60;
const MAX_FOLD_RETRIES: usize = 100;

/// Leading `k` singular values, descending.
pub fn spectrum_report(m: &Matrix, k: usize) -> Result<Vec<f64>> {
    singular_values(m, k)
}

/// `min(20, min(dims) − 1)`
pub fn default_max_rank(m: &Matrix) -> usize {
    20.min(m.rows().min(m.cols()).saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub metric: Option<usize>,
    pub singular_values: Vec<f64>,
    /// `fold_errors[r − 1][f]`: held-out mean squared error of the rank-r
    /// completion on fold f.
    pub fold_errors: Vec<Vec<f64>>,
    pub mean_errors: Vec<f64>,
    pub selected_rank: usize,
}

impl RankReport {
    pub fn write_spectrum_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        write_record(&mut w, path, ["index", "singular_value"])?;
        for (i, s) in self.singular_values.iter().enumerate() {
            write_record(&mut w, path, [(i + 1).to_string(), fmt_real(*s)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `rank,fold,error` rows followed by `rank,mean,error` rows.
    pub fn write_bcv_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        write_record(&mut w, path, ["rank", "fold", "error"])?;
        for (r, errs) in self.fold_errors.iter().enumerate() {
            for (f, e) in errs.iter().enumerate() {
                write_record(
                    &mut w,
                    path,
                    [(r + 1).to_string(), f.to_string(), fmt_real(*e)],
                )?;
            }
        }
        for (r, e) in self.mean_errors.iter().enumerate() {
            write_record(
                &mut w,
                path,
                [(r + 1).to_string(), "mean".to_string(), fmt_real(*e)],
            )?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Randomly partitions the entries of a rows×cols matrix into `folds`
/// scattered holdout sets: shuffle the entry positions and deal them out
/// round-robin. Assignments whose holdout would leave a row or column of the
/// retained entries empty are redrawn.
pub fn speckled_folds(
    rows: usize,
    cols: usize,
    folds: usize,
    stream: &mut RngStream,
) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "bi-cross-validation needs >= 2 folds, got {folds}"
        )));
    }
    if rows * cols < folds {
        return Err(Error::InvalidArgument("fewer entries than folds".into()));
    }
    let mut positions: Vec<usize> = (0..rows * cols).collect();
    let mut last = Ok(());
    for _ in 0..MAX_FOLD_RETRIES {
        stream.shuffle(&mut positions);
        let mut assign = vec![0; rows * cols];
        for (n, &p) in positions.iter().enumerate() {
            assign[p] = n % folds;
        }
        last = check_folds(rows, cols, folds, &assign);
        if last.is_ok() {
            return Ok(assign);
        }
    }
    last.map(|_| Vec::new())
}

/// Errors if some fold holds out an entire row or column.
fn check_folds(rows: usize, cols: usize, folds: usize, assign: &[usize]) -> Result<()> {
    for f in 0..folds {
        for i in 0..rows {
            if (0..cols).all(|j| assign[i * cols + j] == f) {
                return Err(Error::EmptyLine {
                    axis: "row",
                    index: i,
                });
            }
        }
        for j in 0..cols {
            if (0..rows).all(|i| assign[i * cols + j] == f) {
                return Err(Error::EmptyLine {
                    axis: "column",
                    index: j,
                });
            }
        }
    }
    Ok(())
}

/// Selects the rank whose completions best predict held-out entries.
pub fn bcv_effective_rank(
    m: &Matrix,
    folds: usize,
    max_rank: Option<usize>,
    stream: &mut RngStream,
) -> Result<RankReport> {
    let assign = speckled_folds(m.rows(), m.cols(), folds, stream)?;
    bcv_with_folds(m, &assign, folds, max_rank, stream)
}

/// Bi-cross-validation with a given entry→fold assignment.
pub fn bcv_with_folds(
    m: &Matrix,
    assign: &[usize],
    folds: usize,
    max_rank: Option<usize>,
    stream: &mut RngStream,
) -> Result<RankReport> {
    let (rows, cols) = (m.rows(), m.cols());
    if assign.len() != rows * cols {
        return Err(Error::dims("fold assignment", rows * cols, assign.len()));
    }
    if folds < 2 || assign.iter().any(|&f| f >= folds) {
        return Err(Error::InvalidArgument(format!(
            "fold ids must lie in 0..{folds} with folds >= 2"
        )));
    }
    let limit = rows.min(cols).saturating_sub(1);
    let max_rank = max_rank.unwrap_or_else(|| default_max_rank(m));
    if max_rank == 0 || max_rank > limit {
        return Err(Error::InvalidArgument(format!(
            "max_rank must lie in 1..={limit}, got {max_rank}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    check_folds(rows, cols, folds, assign)?;

    let mut fold_errors = vec![vec![0.0; folds]; max_rank];
    for f in 0..folds {
        let mask: Vec<bool> = assign.iter().map(|&a| a != f).collect();
        let held: Vec<usize> = (0..rows * cols).filter(|&p| !mask[p]).collect();
        for r in 1..=max_rank {
            let mut sub = stream.derive((f * 1000 + r) as u64);
            let c = als_complete(m, &mask, r, DEFAULT_ALS_REG, BCV_ALS_ITERS, &mut sub)?;
            let sse: f64 = held
                .iter()
                .map(|&p| (c.as_slice()[p] - m.as_slice()[p]).powi(2))
                .sum();
            fold_errors[r - 1][f] = sse / held.len() as f64;
        }
    }
    let mean_errors: Vec<f64> = fold_errors
        .iter()
        .map(|e| e.iter().sum::<f64>() / folds as f64)
        .collect();
    let mut selected = 1;
    for (i, &e) in mean_errors.iter().enumerate() {
        if e < mean_errors[selected - 1] {
            selected = i + 1;
        }
    }
    let k = rows.min(cols);
    Ok(RankReport {
        metric: None,
        singular_values: singular_values(m, k)?,
        fold_errors,
        mean_errors,
        selected_rank: selected,
    })
}

/// A rows×cols matrix `U Vᵀ` of rank `rank` with standard normal factors,
/// plus Gaussian noise whose variance is the signal's mean square divided
/// by `snr` (no noise when `snr` is infinite).
pub fn planted_low_rank(
    rows: usize,
    cols: usize,
    rank: usize,
    snr: f64,
    stream: &mut RngStream,
) -> Matrix {
    let u = Matrix::from_vec(rows, rank, stream.normal_vec(rows * rank)).expect("shape");
    let v = Matrix::from_vec(rank, cols, stream.normal_vec(rank * cols)).expect("shape");
    let mut m = u.matmul(&v).expect("shape");
    if snr.is_finite() {
        let power = m.as_slice().iter().map(|x| x * x).sum::<f64>() / (rows * cols) as f64;
        let sd = (power / snr).sqrt();
        for x in m.as_mut_slice() {
            *x += sd * stream.std_normal();
        }
    }
    m
}
