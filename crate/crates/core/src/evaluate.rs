//! Risk metrics (PEHE, μ-risk, τ-risk), ITE correlation diagnostics and the
//! per-cell risk report shared by every learner.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::Serialize;

use crate::dataset::{csv_writer, fmt_real, write_record, Dataset, PredictedTensor, SplitName};
use crate::error::{Error, Result};
use crate::lrlearner::LRParams;
use crate::numerics::{Matrix, RidgeSystem};

/// Ridge penalty of the τ-risk nuisance fits.
pub const NUISANCE_REG: f64 = 1e-6;

/// A fitted model of potential outcomes.
pub trait OutcomeModel {
    fn outcome(&self, x: &[f64], metric: usize, experiment: usize, arm: usize) -> Result<f64>;

    /// Every potential outcome of one unit in one experiment, `[metric][arm]`.
    fn unit_outcomes(
        &self,
        x: &[f64],
        experiment: usize,
        n_metrics: usize,
        n_arms: usize,
    ) -> Result<Vec<Vec<f64>>> {
        (0..n_metrics)
            .map(|j| {
                (0..n_arms)
                    .map(|t| self.outcome(x, j, experiment, t))
                    .collect()
            })
            .collect()
    }
}

impl OutcomeModel for LRParams {
    fn outcome(&self, x: &[f64], metric: usize, experiment: usize, arm: usize) -> Result<f64> {
        self.predict_outcome(x, metric, experiment, arm)
    }

    fn unit_outcomes(
        &self,
        x: &[f64],
        experiment: usize,
        n_metrics: usize,
        n_arms: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let v = self.embed_unit(x)?;
        (0..n_metrics)
            .map(|j| {
                (0..n_arms)
                    .map(|t| self.outcome_from_embedding(&v, j, experiment, t))
                    .collect()
            })
            .collect()
    }
}

/// Units of `split`, or every unit when `None`.
pub fn split_units(dataset: &Dataset, split: Option<SplitName>) -> HashSet<u64> {
    match split {
        Some(s) => dataset.splits.get(s).iter().copied().collect(),
        None => dataset.units.ids().iter().copied().collect(),
    }
}

/// Predicts every potential outcome for each (unit, experiment) pair of the
/// chosen units that is enrolled or has ground truth.
pub fn predict_tensor<M: OutcomeModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    split: Option<SplitName>,
) -> Result<PredictedTensor> {
    let chosen = split_units(dataset, split);
    let mut pairs: Vec<(u64, usize)> = Vec::new();
    let mut seen = HashSet::new();
    for (u, k, _) in dataset.enrolments(split)? {
        if seen.insert((u, k)) {
            pairs.push((u, k));
        }
    }
    if let Some(truth) = &dataset.truth {
        for r in truth.rows() {
            if chosen.contains(&r.unit_id) && seen.insert((r.unit_id, r.experiment)) {
                pairs.push((r.unit_id, r.experiment));
            }
        }
    }
    let mut out = PredictedTensor::new();
    for (u, k) in pairs {
        let x = dataset
            .units
            .x(u)
            .ok_or_else(|| Error::Consistency(format!("unknown unit {u}")))?;
        let all = model.unit_outcomes(x, k, dataset.n_metrics(), dataset.n_arms(k))?;
        for (j, arms) in all.into_iter().enumerate() {
            for (t, y) in arms.into_iter().enumerate() {
                out.insert(u, k, j, t, y);
            }
        }
    }
    Ok(out)
}

/// Predicts every potential outcome of every chosen unit in every
/// experiment, enrolled or not.
pub fn predict_all_experiments<M: OutcomeModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    split: Option<SplitName>,
) -> Result<PredictedTensor> {
    let chosen = split_units(dataset, split);
    let mut out = PredictedTensor::new();
    for (row, &u) in dataset.units.ids().iter().enumerate() {
        if !chosen.contains(&u) {
            continue;
        }
        let x = dataset.units.features().row(row);
        for k in 0..dataset.n_experiments() {
            let all = model.unit_outcomes(x, k, dataset.n_metrics(), dataset.n_arms(k))?;
            for (j, arms) in all.into_iter().enumerate() {
                for (t, y) in arms.into_iter().enumerate() {
                    out.insert(u, k, j, t, y);
                }
            }
        }
    }
    Ok(out)
}

fn mean_sq_diff(a: &[f64], b: &[f64], op: &'static str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(op, a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument(format!("{op}: no entries")));
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Mean squared difference between predicted and true ITEs.
pub fn pehe(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    mean_sq_diff(predicted, truth, "pehe")
}

/// Mean squared prediction error on held-out observations.
pub fn mu_risk(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    mean_sq_diff(predicted, observed, "mu_risk")
}

/// Nuisance models of the τ-risk, fitted on the evaluation data itself:
/// `m̌` regresses `y` on `x`, `p̌` regresses the 0/1 treatment indicator on
/// `x` (a linear probability model, not clipped).
#[derive(Debug, Clone)]
pub struct TauNuisance {
    pub m: crate::numerics::RidgeFit,
    pub p: crate::numerics::RidgeFit,
}

impl TauNuisance {
    pub fn fit(x: &Matrix, treated: &[bool], y: &[f64], reg: f64) -> Result<Self> {
        if treated.len() != x.rows() || y.len() != x.rows() {
            return Err(Error::dims(
                "tau nuisance",
                x.rows(),
                format!("{}/{}", treated.len(), y.len()),
            ));
        }
        let n1 = treated.iter().filter(|&&t| t).count();
        if n1 == 0 || n1 == treated.len() {
            return Err(Error::InvalidArgument(
                "tau_risk needs both arms in the evaluation data".into(),
            ));
        }
        let sys = RidgeSystem::new(x, reg, true)?;
        let t: Vec<f64> = treated.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(TauNuisance {
            m: sys.solve(y)?,
            p: sys.solve(&t)?,
        })
    }
}

/// `(1/|V|) Σ ((y − m̌(x)) − (t − p̌(x)) τ̂(x))²` with nuisances fitted on V.
pub fn tau_risk(tau_hat: &[f64], x: &Matrix, treated: &[bool], y: &[f64], reg: f64) -> Result<f64> {
    if tau_hat.len() != x.rows() {
        return Err(Error::dims("tau_risk", x.rows(), tau_hat.len()));
    }
    let nu = TauNuisance::fit(x, treated, y, reg)?;
    Ok(tau_risk_with(&nu, tau_hat, x, treated, y))
}

/// τ-risk for already fitted nuisances.
pub fn tau_risk_with(
    nu: &TauNuisance,
    tau_hat: &[f64],
    x: &Matrix,
    treated: &[bool],
    y: &[f64],
) -> f64 {
    let n = y.len();
    (0..n)
        .map(|i| {
            let xi = x.row(i);
            let t = if treated[i] { 1.0 } else { 0.0 };
            ((y[i] - nu.m.predict(xi)) - (t - nu.p.predict(xi)) * tau_hat[i]).powi(2)
        })
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub matrix: Matrix,
    /// Columns with zero variance; their off-diagonal entries are 0.
    pub flagged: Vec<usize>,
}

/// Pearson correlations between the columns of a units×experiments ITE
/// matrix.
pub fn ite_correlation_matrix(m: &Matrix) -> Result<Correlation> {
    let (n, k) = (m.rows(), m.cols());
    if n < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two rows".into(),
        ));
    }
    let mut centred = Vec::with_capacity(k);
    let mut sd = Vec::with_capacity(k);
    let mut flagged = Vec::new();
    for c in 0..k {
        let col = m.column(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let dev: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let ss: f64 = dev.iter().map(|d| d * d).sum();
        let scale: f64 = col.iter().map(|v| v * v).sum();
        if ss <= 1e-24 * scale || ss == 0.0 {
            flagged.push(c);
            sd.push(0.0);
        } else {
            sd.push(ss.sqrt());
        }
        centred.push(dev);
    }
    if !flagged.is_empty() {
        log::warn!("zero-variance ITE columns {flagged:?}; their correlations are set to 0");
    }
    let mut r = Matrix::identity(k);
    for a in 0..k {
        for b in a + 1..k {
            let v = if sd[a] == 0.0 || sd[b] == 0.0 {
                0.0
            } else {
                let cov: f64 = centred[a].iter().zip(&centred[b]).map(|(x, y)| x * y).sum();
                (cov / (sd[a] * sd[b])).clamp(-1.0, 1.0)
            };
            r[(a, b)] = v;
            r[(b, a)] = v;
        }
    }
    Ok(Correlation { matrix: r, flagged })
}

/// Risks of one (metric, experiment) cell. `None` marks a risk that could
/// not be computed (no ground truth, no observations, or a single-arm cell
/// for τ-risk).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRisk {
    pub metric: usize,
    pub experiment: usize,
    pub pehe: Option<f64>,
    pub mu_risk: Option<f64>,
    pub tau_risk: Option<f64>,
    pub n_obs: usize,
    pub n_ite: usize,
}

/// Equal-weight average over experiments; `metric` is `None` for the row
/// averaging every cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: Option<usize>,
    pub pehe: Option<f64>,
    pub mu_risk: Option<f64>,
    pub tau_risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub has_truth: bool,
    pub cells: Vec<CellRisk>,
    pub summary: Vec<MetricSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub nuisance_reg: f64,
    pub tau: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            nuisance_reg: NUISANCE_REG,
            tau: true,
        }
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores `pred` against the observations (and ground truth, when present)
/// of the units in `split`.
pub fn risk_report(
    dataset: &Dataset,
    pred: &PredictedTensor,
    split: Option<SplitName>,
    opts: &EvalOptions,
) -> Result<RiskReport> {
    let chosen = split_units(dataset, split);
    let (nj, nk) = (dataset.n_metrics(), dataset.n_experiments());

    // (metric, experiment) -> observation row indices
    let rows = dataset.rows(split)?;
    let mut by_cell: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_cell.entry((r.metric, r.experiment)).or_default().push(i);
    }
    let ids = dataset.units.ids();

    let mut ite_cells: HashMap<(usize, usize), (Vec<f64>, Vec<f64>)> = HashMap::new();
    if let Some(truth) = &dataset.truth {
        for tr in truth
            .rows()
            .iter()
            .filter(|tr| chosen.contains(&tr.unit_id))
        {
            let p = pred
                .cate(tr.unit_id, tr.experiment, tr.metric, tr.arm)
                .ok_or_else(|| {
                    Error::Missing(format!(
                        "no prediction for unit {} experiment {} metric {} arm {}",
                        tr.unit_id, tr.experiment, tr.metric, tr.arm
                    ))
                })?;
            let cell = ite_cells.entry((tr.metric, tr.experiment)).or_default();
            cell.0.push(p);
            cell.1.push(tr.ite);
        }
    }

    let mut cells = Vec::with_capacity(nj * nk);
    for j in 0..nj {
        for k in 0..nk {
            let idx = by_cell.get(&(j, k)).map(Vec::as_slice).unwrap_or(&[]);
            let mut yhat = Vec::with_capacity(idx.len());
            let mut y = Vec::with_capacity(idx.len());
            for &i in idx {
                let r = &rows[i];
                let u = ids[r.unit_row];
                yhat.push(pred.outcome(u, k, j, r.arm).ok_or_else(|| {
                    Error::Missing(format!(
                        "no prediction for unit {u} experiment {k} metric {j} arm {}",
                        r.arm
                    ))
                })?);
                y.push(r.value);
            }
            let mu = if idx.is_empty() {
                None
            } else {
                Some(mu_risk(&yhat, &y)?)
            };
            let (pe, n_ite) = match ite_cells.get(&(j, k)) {
                Some((p, t)) => (Some(pehe(p, t)?), p.len()),
                None => (None, 0),
            };
            let tau = if opts.tau {
                cell_tau_risk(dataset, pred, &rows, idx, j, k, opts.nuisance_reg)?
            } else {
                None
            };
            cells.push(CellRisk {
                metric: j,
                experiment: k,
                pehe: pe,
                mu_risk: mu,
                tau_risk: tau,
                n_obs: idx.len(),
                n_ite,
            });
        }
    }

    let mut summary: Vec<MetricSummary> = (0..nj)
        .map(|j| {
            let cs = cells.iter().filter(|c| c.metric == j);
            MetricSummary {
                metric: Some(j),
                pehe: mean_of(cs.clone().map(|c| c.pehe)),
                mu_risk: mean_of(cs.clone().map(|c| c.mu_risk)),
                tau_risk: mean_of(cs.map(|c| c.tau_risk)),
            }
        })
        .collect();
    summary.push(MetricSummary {
        metric: None,
        pehe: mean_of(cells.iter().map(|c| c.pehe)),
        mu_risk: mean_of(cells.iter().map(|c| c.mu_risk)),
        tau_risk: mean_of(cells.iter().map(|c| c.tau_risk)),
    });
    Ok(RiskReport {
        has_truth: dataset.truth.is_some(),
        cells,
        summary,
    })
}

/// Mean τ-risk over the treated arms of one cell, each arm scored against
/// control on the cell's observations.
fn cell_tau_risk(
    dataset: &Dataset,
    pred: &PredictedTensor,
    rows: &[crate::dataset::ObsRow],
    idx: &[usize],
    metric: usize,
    experiment: usize,
    reg: f64,
) -> Result<Option<f64>> {
    let ids = dataset.units.ids();
    let feats = dataset.units.features();
    let mut per_arm = Vec::new();
    for t in 1..dataset.n_arms(experiment) {
        let sel: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| rows[i].arm == 0 || rows[i].arm == t)
            .collect();
        let treated: Vec<bool> = sel.iter().map(|&i| rows[i].arm == t).collect();
        let n1 = treated.iter().filter(|&&b| b).count();
        if n1 == 0 || n1 == sel.len() {
            log::warn!("tau_risk skipped for metric {metric}, experiment {experiment}, arm {t}: single-arm data");
            continue;
        }
        let x = feats.select_rows(&sel.iter().map(|&i| rows[i].unit_row).collect::<Vec<_>>());
        let y: Vec<f64> = sel.iter().map(|&i| rows[i].value).collect();
        let tau_hat = sel
            .iter()
            .map(|&i| {
                let u = ids[rows[i].unit_row];
                pred.cate(u, experiment, metric, t).ok_or_else(|| {
                    Error::Missing(format!(
                        "no CATE for unit {u} experiment {experiment} arm {t}"
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        per_arm.push(tau_risk(&tau_hat, &x, &treated, &y, reg)?);
    }
    Ok(mean_of(per_arm.into_iter().map(Some)))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

impl RiskReport {
    /// The row averaging every cell.
    pub fn overall(&self) -> &MetricSummary {
        self.summary
            .last()
            .expect("summary always has the overall row")
    }

    /// `metric_id,experiment_id,[pehe,]mu_risk,tau_risk`; the PEHE column is
    /// present only with ground truth.
    pub fn write_cells_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec!["metric_id", "experiment_id"];
        if self.has_truth {
            header.push("pehe");
        }
        header.extend(["mu_risk", "tau_risk"]);
        write_record(&mut w, path, header)?;
        for c in &self.cells {
            let mut rec = vec![c.metric.to_string(), c.experiment.to_string()];
            if self.has_truth {
                rec.push(opt(c.pehe));
            }
            rec.push(opt(c.mu_risk));
            rec.push(opt(c.tau_risk));
            write_record(&mut w, path, rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per metric plus a final `all` row.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec!["metric_id"];
        if self.has_truth {
            header.push("pehe");
        }
        header.extend(["mu_risk", "tau_risk"]);
        write_record(&mut w, path, header)?;
        for s in &self.summary {
            let mut rec = vec![s
                .metric
                .map_or_else(|| "all".to_string(), |j| j.to_string())];
            if self.has_truth {
                rec.push(opt(s.pehe));
            }
            rec.push(opt(s.mu_risk));
            rec.push(opt(s.tau_risk));
            write_record(&mut w, path, rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn pehe_cases() {
        let t = [0.5, -1.0, 2.0];
        assert_eq!(pehe(&t, &t).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert!((pehe(&shifted, &t).unwrap() - 1.0).abs() <= 1e-15);
        // truth {0,1,2,0}, predictions {0,3,2,−2}: (0 + 4 + 0 + 4)/4
        assert_eq!(
            pehe(&[0.0, 3.0, 2.0, -2.0], &[0.0, 1.0, 2.0, 0.0]).unwrap(),
            2.0
        );
        // truth/prediction pairs (0,1),(1,3),(2,2),(0,−2): (1 + 4 + 0 + 4)/4
        assert_eq!(
            pehe(&[1.0, 3.0, 2.0, -2.0], &[0.0, 1.0, 2.0, 0.0]).unwrap(),
            2.25
        );
        assert!(pehe(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mu_risk_cases() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(mu_risk(&y, &y).unwrap(), 0.0);
        let c = 0.3;
        let yc: Vec<f64> = y.iter().map(|v| v + c).collect();
        assert!((mu_risk(&yc, &y).unwrap() - c * c).abs() <= 1e-15);
        // errors 1, −2, 0.5 → (1 + 4 + 0.25)/3
        assert!((mu_risk(&[2.0, -4.0, 1.0], &y).unwrap() - 5.25 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn tau_risk_hand_case() {
        // No features: m̌ = mean(y) = 2.5, p̌ = mean(t) = 0.5.
        let x = Matrix::zeros(4, 0);
        let t = [true, false, true, false];
        let y = [4.0, 1.0, 3.0, 2.0];
        let tau = [2.0, 2.0, 1.0, 0.0];
        // residuals y − m̌: 1.5, −1.5, 0.5, −0.5; t − p̌: ±0.5
        // terms: (1.5 − 1)² + (−1.5 + 1)² + (0.5 − 0.5)² + (−0.5 − 0)²
        let want = (0.25 + 0.25 + 0.0 + 0.25) / 4.0;
        let got = tau_risk(&tau, &x, &t, &y, NUISANCE_REG).unwrap();
        assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }

    #[test]
    fn tau_risk_zero_tau_is_outcome_residual() {
        let mut s = RngStream::new(6);
        let n = 40;
        let x = Matrix::from_vec(n, 3, s.normal_vec(n * 3)).unwrap();
        let t: Vec<bool> = (0..n).map(|_| s.bernoulli(0.5)).collect();
        let y = s.normal_vec(n);
        let nu = TauNuisance::fit(&x, &t, &y, NUISANCE_REG).unwrap();
        let direct: f64 = (0..n)
            .map(|i| (y[i] - nu.m.predict(x.row(i))).powi(2))
            .sum::<f64>()
            / n as f64;
        let got = tau_risk(&vec![0.0; n], &x, &t, &y, NUISANCE_REG).unwrap();
        assert!((got - direct).abs() <= 1e-14 * direct.max(1.0));
    }

    #[test]
    fn tau_risk_single_arm_rejected() {
        let x = Matrix::zeros(3, 1);
        assert!(tau_risk(&[0.0; 3], &x, &[true; 3], &[1.0, 2.0, 3.0], NUISANCE_REG).is_err());
    }

    #[test]
    fn tau_risk_prefers_true_cate() {
        let mut wins = 0;
        for trial in 0..100 {
            let mut s = RngStream::new(1000 + trial);
            let n = 2000;
            let x = Matrix::from_vec(n, 2, s.normal_vec(n * 2)).unwrap();
            let t: Vec<bool> = (0..n).map(|_| s.bernoulli(0.5)).collect();
            let tau: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * x.row(i)[0]).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let r = x.row(i);
                    r[1] - 0.3 * r[0] + if t[i] { tau[i] } else { 0.0 } + 0.1 * s.std_normal()
                })
                .collect();
            let off: Vec<f64> = tau.iter().map(|v| v + 0.5).collect();
            if tau_risk(&tau, &x, &t, &y, NUISANCE_REG).unwrap()
                <= tau_risk(&off, &x, &t, &y, NUISANCE_REG).unwrap()
            {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}/100");
    }

    #[test]
    fn correlation_cases() {
        let same = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![4.0, 4.0]]).unwrap();
        let c = ite_correlation_matrix(&same).unwrap();
        assert!(c.matrix.as_slice().iter().all(|v| (v - 1.0).abs() <= 1e-12));

        let orth = Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        let c = ite_correlation_matrix(&orth).unwrap();
        assert_eq!(c.matrix[(0, 1)], 0.0);

        // Three columns, hand covariance / standard deviations.
        let m = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.0],
            vec![2.0, 1.0, 1.0],
            vec![3.0, 3.0, 5.0],
        ])
        .unwrap();
        // centred: a = (−1,0,1), b = (0,−1,1), c = (−2,−1,3)
        // ab = 1, ac = 5, bc = 4; |a|² = 2, |b|² = 2, |c|² = 14
        let c = ite_correlation_matrix(&m).unwrap();
        let want = [
            [1.0, 0.5, 5.0 / 28f64.sqrt()],
            [0.5, 1.0, 4.0 / 28f64.sqrt()],
            [0.0; 3],
        ];
        for a in 0..2 {
            for b in 0..3 {
                assert!((c.matrix[(a, b)] - want[a][b]).abs() <= 1e-12);
                assert_eq!(c.matrix[(a, b)], c.matrix[(b, a)]);
            }
        }
    }

    #[test]
    fn zero_variance_column_flagged() {
        let m = Matrix::from_rows(&[vec![1.0, 0.3], vec![2.0, 0.3], vec![0.0, 0.3]]).unwrap();
        let c = ite_correlation_matrix(&m).unwrap();
        assert_eq!(c.flagged, vec![1]);
        assert_eq!(c.matrix[(0, 1)], 0.0);
        assert_eq!(c.matrix[(1, 1)], 1.0);
    }
}
