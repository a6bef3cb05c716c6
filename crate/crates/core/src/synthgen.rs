//! Synthetic and semi-synthetic data generators.
//!
//! [`gen_synthetic`] draws the linear multi-experiment model
//!
//! ```text
//! A_j ~ N(0,1)^{d×d}                per metric
//! e¹_k, e⁰_k = unit-normalised N(0,1)^d   per experiment
//! v ~ N(0,1)^{N×d}, rescaled to ‖v‖_F = √N   per experiment
//! Yᵗ = v A_j eᵗ_k + σ·noise,   ITE = Y¹ − Y⁰,   X = v L,   T ~ Bern(0.5)
//! ```
//!
//! with one feature loading `L ~ N(0,1)^{d×m}` shared by all experiments.
//! [`semisynth_from_logits`] turns a classifier's per-class logits into a
//! one-metric, many-experiment dataset with known ITEs.

use serde::{Deserialize, Serialize};

use crate::dataset::{
    split_units, Dataset, Observation, PotentialOutcomeTensor, SplitFractions, Splits, UnitTable,
};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Training units per arm per experiment (2n units per experiment).
    pub n_per_arm: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub experiments: usize,
    pub metrics: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Extra units per arm per experiment placed in the validation split.
    pub val_per_arm: usize,
    /// Extra units per arm per experiment placed in the test split.
    pub test_per_arm: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_arm: 25,
            latent_dim: 32,
            feature_dim: 128,
            experiments: 50,
            metrics: 5,
            noise_sd: 0.1,
            seed: 0,
            val_per_arm: 0,
            test_per_arm: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_per_arm", self.n_per_arm),
            ("latent_dim", self.latent_dim),
            ("feature_dim", self.feature_dim),
            ("experiments", self.experiments),
            ("metrics", self.metrics),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_sd must be >= 0, got {}",
                self.noise_sd
            )));
        }
        if self.latent_dim > self.feature_dim {
            log::warn!(
                "latent_dim {} > feature_dim {}: features cannot identify the latent units",
                self.latent_dim,
                self.feature_dim
            );
        }
        Ok(())
    }

    fn units_per_experiment(&self) -> usize {
        2 * (self.n_per_arm + self.val_per_arm + self.test_per_arm)
    }
}

/// The latent factors behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthLatents {
    /// `A_j`, one d×d matrix per metric.
    pub operators: Vec<Matrix>,
    /// Shared d×m feature loading `L`.
    pub loading: Matrix,
    /// `[e⁰_k, e¹_k]` per experiment.
    pub arm_embeddings: Vec<[Vec<f64>; 2]>,
    /// Latent `v` per unit, rows aligned with the unit table.
    pub unit_latents: Matrix,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub latents: SynthLatents,
}

fn unit_normal(stream: &mut RngStream, d: usize) -> Vec<f64> {
    let mut e = stream.normal_vec(d);
    let norm = dot(&e, &e).sqrt();
    e.iter_mut().for_each(|x| *x /= norm);
    e
}

/// Draws a synthetic multi-experiment dataset with ground-truth outcomes.
///
/// Each experiment derives its own stream from the root seed, so the output
/// does not depend on generation order.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let (d, m, kk, jj) = (
        cfg.latent_dim,
        cfg.feature_dim,
        cfg.experiments,
        cfg.metrics,
    );
    let root = RngStream::new(cfg.seed);

    let mut op_stream = root.derive(0);
    let operators: Vec<Matrix> = (0..jj)
        .map(|_| Matrix::from_vec(d, d, op_stream.normal_vec(d * d)))
        .collect::<Result<_>>()?;
    let mut load_stream = root.derive(1);
    let loading = Matrix::from_vec(d, m, load_stream.normal_vec(d * m))?;

    let per_exp = cfg.units_per_experiment();
    let n_units = per_exp * kk;
    let mut latents = Matrix::zeros(n_units, d);
    let mut ids = Vec::with_capacity(n_units);
    let mut observations = Vec::with_capacity(n_units * jj);
    let mut truth = PotentialOutcomeTensor::new();
    let mut splits = Splits::default();
    let mut arm_embeddings = Vec::with_capacity(kk);

    for k in 0..kk {
        let mut s = root.derive(100 + k as u64);
        let e1 = unit_normal(&mut s, d);
        let e0 = unit_normal(&mut s, d);
        let mut v = Matrix::from_vec(per_exp, d, s.normal_vec(per_exp * d))?;
        let fro = v.frobenius_norm();
        v.scale((per_exp as f64).sqrt() / fro);

        // A_j eᵗ for both arms, per metric.
        let directions: Vec<[Vec<f64>; 2]> = operators
            .iter()
            .map(|a| Ok([a.matvec(&e0)?, a.matvec(&e1)?]))
            .collect::<Result<_>>()?;

        for i in 0..per_exp {
            let unit_id = (k * per_exp + i) as u64;
            let row = k * per_exp + i;
            latents.row_mut(row).copy_from_slice(v.row(i));
            ids.push(unit_id);
            let split = if i < 2 * cfg.n_per_arm {
                &mut splits.train
            } else if i < 2 * (cfg.n_per_arm + cfg.val_per_arm) {
                &mut splits.validation
            } else {
                &mut splits.test
            };
            split.push(unit_id);

            let arm = usize::from(s.bernoulli(0.5));
            for (j, dir) in directions.iter().enumerate() {
                let y0 = dot(v.row(i), &dir[0]) + cfg.noise_sd * s.std_normal();
                let y1 = dot(v.row(i), &dir[1]) + cfg.noise_sd * s.std_normal();
                observations.push(Observation {
                    unit_id,
                    experiment: k,
                    arm,
                    metric: j,
                    value: if arm == 1 { y1 } else { y0 },
                });
                truth.push(unit_id, k, j, 1, y0, y1)?;
            }
        }
        arm_embeddings.push([e0, e1]);
    }

    let features = latents.matmul(&loading)?;
    let units = UnitTable::new(ids, features)?;
    let echo = serde_json::to_value(cfg).expect("config serializes");
    let dataset = Dataset::new(
        units,
        observations,
        splits,
        Some(truth),
        jj,
        vec![2; kk],
        Some(echo),
    )?;
    Ok(SynthOutput {
        dataset,
        latents: SynthLatents {
            operators,
            loading,
            arm_embeddings,
            unit_latents: latents,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiSynthConfig {
    pub control_class: usize,
    /// Probability that a unit is enrolled in any one experiment.
    pub assign_prob: f64,
    pub seed: u64,
    pub split: SplitFractions,
    /// Store ground truth for every (unit, experiment), not only enrolments.
    pub full_truth: bool,
}

impl Default for SemiSynthConfig {
    fn default() -> Self {
        SemiSynthConfig {
            control_class: 0,
            assign_prob: 0.1,
            seed: 0,
            split: SplitFractions {
                train: 1.0,
                validation: 0.0,
                test: 0.0,
            },
            full_truth: true,
        }
    }
}

/// Builds a semi-synthetic dataset: the logit of class c is the potential
/// outcome of "treatment c", the control class is arm 0, and every other
/// class becomes one experiment (in increasing class order). Each unit joins
/// each experiment independently with probability `assign_prob` and is then
/// assigned an arm by a fair coin.
pub fn semisynth_from_logits(
    features: &Matrix,
    logits: &Matrix,
    cfg: &SemiSynthConfig,
) -> Result<Dataset> {
    let n = features.rows();
    if logits.rows() != n {
        return Err(Error::dims("semisynth_from_logits rows", n, logits.rows()));
    }
    let classes = logits.cols();
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if cfg.control_class >= classes {
        return Err(Error::Index(format!(
            "control_class {} out of range for {classes} classes",
            cfg.control_class
        )));
    }
    if !(cfg.assign_prob > 0.0 && cfg.assign_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "assign_prob must be in (0, 1], got {}",
            cfg.assign_prob
        )));
    }
    let treated: Vec<usize> = (0..classes).filter(|&c| c != cfg.control_class).collect();
    let root = RngStream::new(cfg.seed);
    let mut assign = root.derive(0);

    let ids: Vec<u64> = (0..n as u64).collect();
    let mut observations = Vec::new();
    let mut truth = PotentialOutcomeTensor::new();
    for (i, &unit_id) in ids.iter().enumerate() {
        let control = logits[(i, cfg.control_class)];
        for (k, &class) in treated.iter().enumerate() {
            let outcome = logits[(i, class)];
            let enrolled = assign.bernoulli(cfg.assign_prob);
            if enrolled {
                let arm = usize::from(assign.bernoulli(0.5));
                observations.push(Observation {
                    unit_id,
                    experiment: k,
                    arm,
                    metric: 0,
                    value: if arm == 1 { outcome } else { control },
                });
            }
            if enrolled || cfg.full_truth {
                truth.push(unit_id, k, 0, 1, control, outcome)?;
            }
        }
    }
    let splits = split_units(&ids, cfg.split, &mut root.derive(1))?;
    let units = UnitTable::new(ids, features.clone())?;
    let echo = serde_json::to_value(cfg).expect("config serializes");
    Dataset::new(
        units,
        observations,
        splits,
        Some(truth),
        1,
        vec![2; treated.len()],
        Some(echo),
    )
}

/// A small stand-in for a trained classifier: Gaussian features and logits
/// that are a nonlinear, low-rank function of them,
/// `logits = [tanh(1.5 s), s² − 1] W`, with `s = z W₁ / √p`.
pub fn classifier_fixture(
    n: usize,
    features: usize,
    classes: usize,
    hidden: usize,
    seed: u64,
) -> (Matrix, Matrix) {
    let root = RngStream::new(seed);
    let mut s = root.derive(0);
    let w1 = Matrix::from_vec(features, hidden, s.normal_vec(features * hidden)).expect("sized");
    let w2 =
        Matrix::from_vec(2 * hidden, classes, s.normal_vec(2 * hidden * classes)).expect("sized");
    let mut zs = root.derive(1);
    let z = Matrix::from_vec(n, features, zs.normal_vec(n * features)).expect("sized");
    let pre = z.matmul(&w1).expect("dims");
    let scale = 1.0 / (features as f64).sqrt();
    let mut h = Matrix::zeros(n, 2 * hidden);
    for i in 0..n {
        for a in 0..hidden {
            let v = pre[(i, a)] * scale;
            h[(i, a)] = (1.5 * v).tanh();
            h[(i, hidden + a)] = v * v - 1.0;
        }
    }
    let mut logits = h.matmul(&w2).expect("dims");
    logits.scale(1.0 / (2.0 * hidden as f64).sqrt());
    (z, logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ite_slice;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            n_per_arm: 20,
            latent_dim: 3,
            feature_dim: 6,
            experiments: 4,
            metrics: 2,
            noise_sd: noise,
            seed: 3,
            val_per_arm: 2,
            test_per_arm: 3,
        }
    }

    #[test]
    fn arm_embeddings_unit_norm() {
        let out = gen_synthetic(&small(0.1)).unwrap();
        for pair in &out.latents.arm_embeddings {
            for e in pair {
                assert!((dot(e, e).sqrt() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_ite_is_bilinear() {
        let cfg = small(0.0);
        let out = gen_synthetic(&cfg).unwrap();
        let lat = &out.latents;
        let truth = out.dataset.truth.as_ref().unwrap();
        for t in truth.rows() {
            let row = out.dataset.units.row_of(t.unit_id).unwrap();
            let [e0, e1] = &lat.arm_embeddings[t.experiment];
            let diff: Vec<f64> = e1.iter().zip(e0).map(|(a, b)| a - b).collect();
            let dir = lat.operators[t.metric].matvec(&diff).unwrap();
            let expect = dot(lat.unit_latents.row(row), &dir);
            assert!((t.ite - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn stacked_slice_matches_latents() {
        // With equal n per experiment, column k of the stacked slice is
        // experiment k's units' v A_j (e¹ − e⁰).
        let cfg = small(0.0);
        let out = gen_synthetic(&cfg).unwrap();
        let per = 2 * (cfg.n_per_arm + cfg.val_per_arm + cfg.test_per_arm);
        let truth = out.dataset.truth.as_ref().unwrap();
        let j = 1;
        for k in 0..cfg.experiments {
            let ids: Vec<u64> = (0..per).map(|i| (k * per + i) as u64).collect();
            let col = ite_slice(truth, &ids, &[k], j, 1).unwrap();
            let [e0, e1] = &out.latents.arm_embeddings[k];
            let diff: Vec<f64> = e1.iter().zip(e0).map(|(a, b)| a - b).collect();
            let rows: Vec<usize> = ids
                .iter()
                .map(|&u| out.dataset.units.row_of(u).unwrap())
                .collect();
            let v = out.latents.unit_latents.select_rows(&rows);
            let expect = v
                .matvec(&out.latents.operators[j].matvec(&diff).unwrap())
                .unwrap();
            for (i, e) in expect.iter().enumerate() {
                assert!((col[(i, 0)] - e).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn features_are_latents_times_loading() {
        let out = gen_synthetic(&small(0.1)).unwrap();
        let vl = out
            .latents
            .unit_latents
            .matmul(&out.latents.loading)
            .unwrap();
        assert_eq!(&vl, out.dataset.units.features());
    }

    #[test]
    fn latent_rows_have_unit_mean_square() {
        let cfg = small(0.1);
        let out = gen_synthetic(&cfg).unwrap();
        let per = 2 * (cfg.n_per_arm + cfg.val_per_arm + cfg.test_per_arm);
        let v = &out.latents.unit_latents;
        for k in 0..cfg.experiments {
            let ss: f64 = (k * per..(k + 1) * per)
                .map(|r| dot(v.row(r), v.row(r)))
                .sum();
            assert!((ss / per as f64 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = gen_synthetic(&small(0.1)).unwrap().dataset;
        let b = gen_synthetic(&small(0.1)).unwrap().dataset;
        assert_eq!(a, b);
        let mut cfg = small(0.1);
        cfg.seed = 4;
        assert_ne!(gen_synthetic(&cfg).unwrap().dataset, a);
    }

    #[test]
    fn split_sizes_follow_config() {
        let cfg = small(0.1);
        let ds = gen_synthetic(&cfg).unwrap().dataset;
        assert_eq!(ds.splits.train.len(), 2 * 20 * 4);
        assert_eq!(ds.splits.validation.len(), 2 * 2 * 4);
        assert_eq!(ds.splits.test.len(), 2 * 3 * 4);
        assert_eq!(ds.observations.len(), ds.units.len() * 2);
    }

    #[test]
    fn rejects_zero_counts() {
        let mut cfg = small(0.1);
        cfg.metrics = 0;
        assert!(gen_synthetic(&cfg).is_err());
        let mut cfg = small(0.1);
        cfg.noise_sd = -1.0;
        assert!(gen_synthetic(&cfg).is_err());
    }

    fn logits(n: usize, classes: usize) -> (Matrix, Matrix) {
        classifier_fixture(n, 5, classes, 3, 1)
    }

    #[test]
    fn semisynth_experiment_count_and_ite() {
        let (x, l) = logits(400, 100);
        let cfg = SemiSynthConfig {
            control_class: 0,
            assign_prob: 0.1,
            ..Default::default()
        };
        let ds = semisynth_from_logits(&x, &l, &cfg).unwrap();
        assert_eq!(ds.n_experiments(), 99);
        assert_eq!(ds.n_metrics(), 1);
        for t in ds.truth.as_ref().unwrap().rows() {
            let i = t.unit_id as usize;
            assert_eq!(t.ite, l[(i, t.experiment + 1)] - l[(i, 0)]);
        }
    }

    #[test]
    fn semisynth_full_enrolment() {
        let (x, l) = logits(30, 4);
        let cfg = SemiSynthConfig {
            control_class: 2,
            assign_prob: 1.0,
            ..Default::default()
        };
        let ds = semisynth_from_logits(&x, &l, &cfg).unwrap();
        assert_eq!(ds.observations.len(), 30 * 3);
        // class order skips the control: experiment 2 is class 3
        let t = ds.truth.as_ref().unwrap().get(5, 2, 0, 1).unwrap();
        assert_eq!((t.control, t.treated), (l[(5, 2)], l[(5, 3)]));
    }

    #[test]
    fn semisynth_errors() {
        let (x, l) = logits(10, 3);
        let cfg = SemiSynthConfig {
            control_class: 3,
            ..Default::default()
        };
        assert!(matches!(
            semisynth_from_logits(&x, &l, &cfg),
            Err(Error::Index(_))
        ));
        let short = x.select_rows(&[0, 1, 2]);
        assert!(semisynth_from_logits(&short, &l, &SemiSynthConfig::default()).is_err());
        let one = l.select_cols(&[0]);
        assert!(semisynth_from_logits(&x, &one, &SemiSynthConfig::default()).is_err());
    }
}
