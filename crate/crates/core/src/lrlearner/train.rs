use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ObsRow, SplitName};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

use super::grad::{add_weight_decay, Workspace};
use super::params::{Activation, Dims, LRParams};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub latent_dim: usize,
    /// Defaults to `latent_dim`.
    pub hidden_dim: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Drop the ReLU between the two layers.
    pub linear: bool,
    /// Learning rate at the end of training as a fraction of
    /// `learning_rate`, reached by cosine annealing. 1 keeps it constant.
    pub final_lr_scale: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            learning_rate: 5e-4,
            weight_decay: 5e-3,
            latent_dim: 32,
            hidden_dim: None,
            epochs: 250,
            batch_size: 1024,
            seed: 0,
            linear: false,
            final_lr_scale: 1.0,
        }
    }
}

impl HyperConfig {
    pub fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(self.latent_dim)
    }

    /// Learning rate after a fraction `progress` of training.
    pub fn learning_rate_at(&self, progress: f64) -> f64 {
        let f = self.final_lr_scale;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }

    pub fn activation(&self) -> Activation {
        if self.linear {
            Activation::Identity
        } else {
            Activation::Relu
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("hyperparameter {what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.final_lr_scale) {
            return bad("final_lr_scale must lie in [0, 1]");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and >= 0");
        }
        if self.latent_dim == 0 || self.hidden() == 0 {
            return bad("latent_dim and hidden_dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    /// Model shape for a dataset.
    pub fn dims_for(&self, dataset: &Dataset) -> Dims {
        Dims {
            n_features: dataset.units.n_features(),
            hidden: self.hidden(),
            latent: self.latent_dim,
            n_metrics: dataset.n_metrics(),
            arms_per_experiment: dataset.manifest.arms_per_experiment.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Observation-weighted mean minibatch loss (including the weight-decay
    /// term) for each epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean squared error on validation observations per metric after the
    /// last epoch; empty when there is no validation split. `NaN` marks a
    /// metric with no validation observations.
    pub validation_mu_risk: Vec<f64>,
    pub steps: usize,
}

/// Trains on the dataset's train split, reporting μ-risk on its validation
/// split. Starts from `init` when given, otherwise from a fresh
/// initialization seeded by `hyper.seed`.
pub fn train(
    dataset: &Dataset,
    hyper: &HyperConfig,
    init: Option<LRParams>,
) -> Result<(LRParams, TrainReport)> {
    let train_rows = dataset.rows(Some(SplitName::Train))?;
    let val_rows = dataset.rows(Some(SplitName::Validation))?;
    let dims = hyper.dims_for(dataset);
    train_rows_with(
        dataset.units.features(),
        &train_rows,
        &val_rows,
        dims,
        hyper,
        init,
    )
}

/// Lower-level entry point on resolved observation rows.
pub fn train_rows(
    features: &Matrix,
    rows: &[ObsRow],
    validation: &[ObsRow],
    dims: Dims,
    hyper: &HyperConfig,
    init: Option<LRParams>,
) -> Result<(LRParams, TrainReport)> {
    train_rows_with(features, rows, validation, dims, hyper, init)
}

fn train_rows_with(
    features: &Matrix,
    rows: &[ObsRow],
    validation: &[ObsRow],
    dims: Dims,
    hyper: &HyperConfig,
    init: Option<LRParams>,
) -> Result<(LRParams, TrainReport)> {
    hyper.validate()?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no training observations".into()));
    }
    let root = RngStream::new(hyper.seed);
    let mut params = match init {
        Some(p) => {
            if p.dims() != &dims {
                return Err(Error::dims(
                    "initial parameters",
                    format!("{dims:?}"),
                    format!("{:?}", p.dims()),
                ));
            }
            p
        }
        None => LRParams::init(dims, hyper.activation(), &mut root.derive(0))?,
    };
    let mut order = root.derive(1);

    // Units are the shuffling granularity: each unit's rows stay together so
    // one network pass serves all its observations.
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.unit_row);
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i].unit_row != sorted[start].unit_row {
            groups.push(start..i);
            start = i;
        }
    }

    let n = sorted.len() as f64;
    let mut ws = Workspace::new(&params);
    let mut grad = params.zeros_like();
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let mut batch: Vec<ObsRow> = Vec::with_capacity(hyper.batch_size + 64);
    let mut perm: Vec<usize> = (0..groups.len()).collect();
    let mut step = 0usize;
    let mut epoch_loss = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut perm);
        let mut total = 0.0;
        let mut next = 0;
        while next < perm.len() {
            let progress = (epoch as f64 + next as f64 / perm.len() as f64) / hyper.epochs as f64;
            let lr = hyper.learning_rate_at(progress);
            batch.clear();
            while next < perm.len() && batch.len() < hyper.batch_size {
                batch.extend_from_slice(&sorted[groups[perm[next]].clone()]);
                next += 1;
            }
            grad.as_mut_slice().fill(0.0);
            let mse = ws.accumulate(&params, features, &batch, &mut grad)?;
            let loss = mse + add_weight_decay(&params, hyper.weight_decay, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            total += loss * batch.len() as f64;
            step += 1;
            adam_step(&mut params, &grad, &mut m1, &mut m2, step, lr);
            if !params.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
        }
        let mean = total / n;
        log::debug!("epoch {epoch}: loss {mean:.6e}");
        epoch_loss.push(mean);
    }

    let validation_mu_risk = if validation.is_empty() {
        Vec::new()
    } else {
        per_metric_mse(&params, features, validation)?
    };
    if let Some(last) = epoch_loss.last() {
        log::info!(
            "trained {} epochs ({step} steps), final loss {last:.6e}",
            hyper.epochs
        );
    }
    Ok((
        params,
        TrainReport {
            epoch_loss,
            validation_mu_risk,
            steps: step,
        },
    ))
}

fn adam_step(
    params: &mut LRParams,
    grad: &LRParams,
    m1: &mut [f64],
    m2: &mut [f64],
    t: usize,
    lr: f64,
) {
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for (((p, &g), a), b) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(m1)
        .zip(m2)
    {
        *a = BETA1 * *a + (1.0 - BETA1) * g;
        *b = BETA2 * *b + (1.0 - BETA2) * g * g;
        *p -= lr * (*a / c1) / ((*b / c2).sqrt() + ADAM_EPS);
    }
}

/// Mean squared prediction error per metric over `rows`.
pub(crate) fn per_metric_mse(
    params: &LRParams,
    features: &Matrix,
    rows: &[ObsRow],
) -> Result<Vec<f64>> {
    let j = params.dims().n_metrics;
    let mut sse = vec![0.0; j];
    let mut count = vec![0usize; j];
    let mut cached: Option<(usize, Vec<f64>)> = None;
    for r in rows {
        if cached.as_ref().map(|c| c.0) != Some(r.unit_row) {
            if r.unit_row >= features.rows() {
                return Err(Error::Index(format!("unit row {}", r.unit_row)));
            }
            cached = Some((r.unit_row, params.embed_unit(features.row(r.unit_row))?));
        }
        let v = &cached.as_ref().expect("set above").1;
        let y = params.outcome_from_embedding(v, r.metric, r.experiment, r.arm)?;
        sse[r.metric] += (y - r.value).powi(2);
        count[r.metric] += 1;
    }
    Ok(sse
        .into_iter()
        .zip(count)
        .map(|(s, c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_synthetic, SynthConfig};

    fn small_cfg(noise: f64) -> SynthConfig {
        SynthConfig {
            n_per_arm: 40,
            latent_dim: 3,
            feature_dim: 6,
            experiments: 4,
            metrics: 2,
            noise_sd: noise,
            seed: 5,
            val_per_arm: 10,
            test_per_arm: 0,
        }
    }

    fn hyper(lr: f64, epochs: usize) -> HyperConfig {
        HyperConfig {
            learning_rate: lr,
            weight_decay: 0.0,
            latent_dim: 3,
            hidden_dim: Some(6),
            epochs,
            batch_size: 64,
            seed: 9,
            linear: true,
            final_lr_scale: 1.0,
        }
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let ds = gen_synthetic(&small_cfg(0.1)).unwrap().dataset;
        let h = HyperConfig {
            learning_rate: 0.0,
            weight_decay: 1e-3,
            ..hyper(0.0, 5)
        };
        let init = LRParams::init(
            h.dims_for(&ds),
            Activation::Identity,
            &mut RngStream::new(3),
        )
        .unwrap();
        let (p, rep) = train(&ds, &h, Some(init.clone())).unwrap();
        assert_eq!(p, init);
        let first = rep.epoch_loss[0];
        for l in &rep.epoch_loss {
            assert!((l - first).abs() <= 1e-12 * first);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = gen_synthetic(&small_cfg(0.1)).unwrap().dataset;
        let (p1, r1) = train(&ds, &hyper(1e-2, 3), None).unwrap();
        let (p2, r2) = train(&ds, &hyper(1e-2, 3), None).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(p1, p2);
        let (_, r3) = train(
            &ds,
            &HyperConfig {
                seed: 10,
                ..hyper(1e-2, 3)
            },
            None,
        )
        .unwrap();
        assert_ne!(r1.epoch_loss, r3.epoch_loss);
    }

    #[test]
    fn realizable_data_is_fit() {
        let ds = gen_synthetic(&small_cfg(0.0)).unwrap().dataset;
        let (_, rep) = train(&ds, &hyper(1e-2, 3000), None).unwrap();
        let last = *rep.epoch_loss.last().unwrap();
        assert!(last <= 1e-4, "final training loss {last}");
        assert!(
            rep.validation_mu_risk.iter().all(|&m| m < 1e-3),
            "{:?}",
            rep.validation_mu_risk
        );
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let h = HyperConfig {
            learning_rate: 2e-3,
            final_lr_scale: 0.1,
            ..HyperConfig::default()
        };
        assert_eq!(h.learning_rate_at(0.0), 2e-3);
        assert!((h.learning_rate_at(1.0) - 2e-4).abs() <= 1e-18);
        assert!((h.learning_rate_at(0.5) - 1.1e-3).abs() <= 1e-18);
        let flat = HyperConfig::default();
        assert_eq!(flat.learning_rate_at(0.7), flat.learning_rate);
        let bad = HyperConfig {
            final_lr_scale: 1.5,
            ..HyperConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let ds = gen_synthetic(&small_cfg(0.1)).unwrap().dataset;
        let h = HyperConfig {
            learning_rate: 1e200,
            ..hyper(0.0, 50)
        };
        let err = train(&ds, &h, None).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn bad_hyper_rejected() {
        let ds = gen_synthetic(&small_cfg(0.1)).unwrap().dataset;
        let h = HyperConfig {
            batch_size: 0,
            ..hyper(1e-3, 1)
        };
        assert!(matches!(
            train(&ds, &h, None),
            Err(Error::InvalidArgument(_))
        ));
    }
}
