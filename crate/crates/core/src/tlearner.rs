//! Independent T-learners: for every (metric, experiment, treated arm) one
//! ridge model on treated units and one on control units, with no sharing
//! across cells.

use std::collections::{BTreeMap, HashMap};

use crate::dataset::{Dataset, ObsRow, SplitName};
use crate::error::{Error, Result};
use crate::evaluate::OutcomeModel;
use crate::numerics::{Matrix, RidgeFit, RidgeSystem};

pub const DEFAULT_T_LAMBDA: f64 = 1e-6;
/// Minimum observations per (experiment, arm, metric) cell.
pub const MIN_CELL: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TLearnerPair {
    pub experiment: usize,
    pub metric: usize,
    pub arm: usize,
    pub treated: RidgeFit,
    pub control: RidgeFit,
}

impl TLearnerPair {
    /// `μ̂¹(x) − μ̂⁰(x)`
    pub fn t_cate(&self, x: &[f64]) -> f64 {
        self.treated.predict(x) - self.control.predict(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TLearners {
    n_features: usize,
    pairs: Vec<TLearnerPair>,
    index: HashMap<(usize, usize, usize), usize>,
}

impl TLearners {
    pub fn pairs(&self) -> &[TLearnerPair] {
        &self.pairs
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn pair(&self, metric: usize, experiment: usize, arm: usize) -> Option<&TLearnerPair> {
        self.index
            .get(&(metric, experiment, arm))
            .map(|&i| &self.pairs[i])
    }

    pub fn t_cate(&self, x: &[f64], metric: usize, experiment: usize, arm: usize) -> Result<f64> {
        self.check_x(x)?;
        let p = self.lookup(metric, experiment, arm)?;
        Ok(p.t_cate(x))
    }

    fn lookup(&self, metric: usize, experiment: usize, arm: usize) -> Result<&TLearnerPair> {
        self.pair(metric, experiment, arm).ok_or_else(|| {
            Error::Index(format!(
                "no T-learner for metric {metric}, experiment {experiment}, arm {arm}"
            ))
        })
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::dims("feature vector", self.n_features, x.len()));
        }
        Ok(())
    }
}

impl OutcomeModel for TLearners {
    fn outcome(&self, x: &[f64], metric: usize, experiment: usize, arm: usize) -> Result<f64> {
        self.check_x(x)?;
        if arm == 0 {
            let p = self
                .pairs
                .iter()
                .find(|p| p.metric == metric && p.experiment == experiment)
                .ok_or_else(|| {
                    Error::Index(format!(
                        "no T-learner for metric {metric}, experiment {experiment}"
                    ))
                })?;
            Ok(p.control.predict(x))
        } else {
            Ok(self.lookup(metric, experiment, arm)?.treated.predict(x))
        }
    }
}

/// Fits every pair on the dataset's train split.
pub fn fit_all(dataset: &Dataset, lambda: f64) -> Result<TLearners> {
    let rows = dataset.rows(Some(SplitName::Train))?;
    fit_rows(
        dataset.units.features(),
        &rows,
        &dataset.manifest.arms_per_experiment,
        dataset.n_metrics(),
        lambda,
    )
}

/// Fits every pair from resolved observation rows.
pub fn fit_rows(
    features: &Matrix,
    rows: &[ObsRow],
    arms_per_experiment: &[usize],
    n_metrics: usize,
    lambda: f64,
) -> Result<TLearners> {
    // (experiment, arm) -> metric -> (unit rows, values)
    let mut cells: BTreeMap<(usize, usize), Vec<(Vec<usize>, Vec<f64>)>> = BTreeMap::new();
    for r in rows {
        if r.experiment >= arms_per_experiment.len()
            || r.arm >= arms_per_experiment[r.experiment]
            || r.metric >= n_metrics
        {
            return Err(Error::Index(format!(
                "observation (experiment {}, arm {}, metric {}) outside the declared layout",
                r.experiment, r.arm, r.metric
            )));
        }
        let cell = cells
            .entry((r.experiment, r.arm))
            .or_insert_with(|| vec![(Vec::new(), Vec::new()); n_metrics]);
        cell[r.metric].0.push(r.unit_row);
        cell[r.metric].1.push(r.value);
    }

    let mut fits: HashMap<(usize, usize, usize), RidgeFit> = HashMap::new();
    for (k, &arms) in arms_per_experiment.iter().enumerate() {
        for t in 0..arms {
            let per_metric = cells.get(&(k, t));
            for j in 0..n_metrics {
                let count = per_metric.map_or(0, |c| c[j].0.len());
                if count < MIN_CELL {
                    return Err(Error::SparseCell {
                        experiment: k,
                        arm: t,
                        metric: j,
                        count,
                        need: MIN_CELL,
                    });
                }
            }
            let per_metric = per_metric.expect("checked above");
            // Metrics observed on the same units share one factorization.
            let mut system: Option<(&[usize], RidgeSystem)> = None;
            for (j, (units, y)) in per_metric.iter().enumerate() {
                let reuse = matches!(&system, Some((u, _)) if *u == units.as_slice());
                if !reuse {
                    let x = features.select_rows(units);
                    system = Some((units, RidgeSystem::new(&x, lambda, true)?));
                }
                let fit = system.as_ref().expect("set above").1.solve(y)?;
                fits.insert((j, k, t), fit);
            }
        }
    }

    let mut pairs = Vec::new();
    let mut index = HashMap::new();
    for j in 0..n_metrics {
        for (k, &arms) in arms_per_experiment.iter().enumerate() {
            for t in 1..arms {
                index.insert((j, k, t), pairs.len());
                pairs.push(TLearnerPair {
                    experiment: k,
                    metric: j,
                    arm: t,
                    treated: fits[&(j, k, t)].clone(),
                    control: fits[&(j, k, 0)].clone(),
                });
            }
        }
    }
    Ok(TLearners {
        n_features: features.cols(),
        pairs,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn obs(unit_row: usize, experiment: usize, arm: usize, metric: usize, value: f64) -> ObsRow {
        ObsRow {
            unit_row,
            experiment,
            arm,
            metric,
            value,
        }
    }

    /// Two experiments × two metrics, each arm of each experiment on its
    /// own 12 units, outcome = linear function + optional arm effect.
    fn layout(s: &mut RngStream, treated_shift: f64) -> (Matrix, Vec<ObsRow>) {
        let n = 48;
        let x = Matrix::from_vec(n, 3, s.normal_vec(n * 3)).unwrap();
        let mut rows = Vec::new();
        for u in 0..n {
            let (k, t) = (u / 24, (u / 12) % 2);
            for j in 0..2 {
                let xr = x.row(u);
                let y = (1.0 + j as f64) * xr[0] - 0.5 * xr[1]
                    + 0.25 * xr[2]
                    + if t == 1 { treated_shift } else { 0.0 };
                rows.push(obs(u, k, t, j, y));
            }
        }
        (x, rows)
    }

    #[test]
    fn one_pair_per_cell() {
        let mut s = RngStream::new(1);
        let (x, rows) = layout(&mut s, 0.0);
        let tl = fit_rows(&x, &rows, &[2, 2], 2, DEFAULT_T_LAMBDA).unwrap();
        assert_eq!(tl.pairs().len(), 2 * 2);
    }

    #[test]
    fn identical_arms_give_zero_cate() {
        let mut s = RngStream::new(2);
        let n = 20;
        let x = Matrix::from_vec(n, 3, s.normal_vec(n * 3)).unwrap();
        let y = s.normal_vec(n);
        let mut rows = Vec::new();
        for t in 0..2 {
            for u in 0..n {
                rows.push(obs(u, 0, t, 0, y[u]));
            }
        }
        let tl = fit_rows(&x, &rows, &[2], 1, 0.0).unwrap();
        for u in 0..n {
            assert!(tl.t_cate(x.row(u), 0, 0, 1).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_shift_moves_every_cate() {
        let mut s = RngStream::new(3);
        let (x, rows) = layout(&mut s, 0.0);
        let mut s = RngStream::new(3);
        let (_, shifted) = layout(&mut s, 2.5);
        let a = fit_rows(&x, &rows, &[2, 2], 2, 0.0).unwrap();
        let b = fit_rows(&x, &shifted, &[2, 2], 2, 0.0).unwrap();
        let probe = [0.3, -1.2, 0.7];
        for (pa, pb) in a.pairs().iter().zip(b.pairs()) {
            assert!((pb.t_cate(&probe) - pa.t_cate(&probe) - 2.5).abs() <= 1e-9);
        }
    }

    #[test]
    fn hand_pair() {
        let p = TLearnerPair {
            experiment: 0,
            metric: 0,
            arm: 1,
            treated: RidgeFit {
                coef: vec![2.0, -1.0],
                intercept: 0.5,
            },
            control: RidgeFit {
                coef: vec![1.0, 1.0],
                intercept: -0.5,
            },
        };
        // (2·3 − 1·2 + 0.5) − (3 + 2 − 0.5) = 4.5 − 4.5
        assert_eq!(p.t_cate(&[3.0, 2.0]), 0.0);
        // (2 + 1 + 0.5) − (1 − 1 − 0.5) = 4
        assert_eq!(p.t_cate(&[1.0, -1.0]), 4.0);
        let same = TLearnerPair {
            control: p.treated.clone(),
            ..p
        };
        assert_eq!(same.t_cate(&[7.0, -3.0]), 0.0);
    }

    #[test]
    fn noiseless_linear_data_recovered() {
        let mut s = RngStream::new(4);
        let (x, rows) = layout(&mut s, 0.0);
        let tl = fit_rows(&x, &rows, &[2, 2], 2, 0.0).unwrap();
        for u in 0..48 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!(tl.t_cate(x.row(u), j, k, 1).unwrap().abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn pairs_are_independent() {
        let mut s = RngStream::new(5);
        let (x, rows) = layout(&mut s, 1.0);
        let base = fit_rows(&x, &rows, &[2, 2], 2, DEFAULT_T_LAMBDA).unwrap();
        // Perturb only experiment 1 / metric 0.
        let mut other = rows.clone();
        for r in other
            .iter_mut()
            .filter(|r| r.experiment == 1 && r.metric == 0)
        {
            r.value += s.std_normal();
        }
        let refit = fit_rows(&x, &other, &[2, 2], 2, DEFAULT_T_LAMBDA).unwrap();
        for (a, b) in base.pairs().iter().zip(refit.pairs()) {
            if (a.experiment, a.metric) != (1, 0) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn sparse_cell_is_named() {
        let x = Matrix::zeros(3, 1);
        let rows = vec![
            obs(0, 0, 0, 0, 1.0),
            obs(1, 0, 0, 0, 2.0),
            obs(2, 0, 1, 0, 3.0),
        ];
        let err = fit_rows(&x, &rows, &[2], 1, DEFAULT_T_LAMBDA).unwrap_err();
        assert!(
            matches!(
                err,
                Error::SparseCell {
                    experiment: 0,
                    arm: 1,
                    metric: 0,
                    count: 1,
                    need: 2
                }
            ),
            "{err}"
        );
    }
}
