use hte_core::dataset::{split_units, SplitFractions};
use hte_core::evaluate::{ite_correlation_matrix, pehe};
use hte_core::lrlearner::{Activation, Dims, LRParams};
use hte_core::numerics::{jacobi_svd, ridge_fit, singular_values, Matrix, RngStream};
use hte_core::rank::{bcv_with_folds, planted_low_rank, speckled_folds};
use hte_core::synthgen::{classifier_fixture, semisynth_from_logits, SemiSynthConfig};
use proptest::prelude::*;

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::from_vec(rows, cols, RngStream::new(seed).normal_vec(rows * cols)).unwrap()
}

/// A seeded permutation of 0..n.
fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    RngStream::new(seed).shuffle(&mut p);
    p
}

/// `out[(rp[i], cp[j])] = m[(i, j)]`
fn permute(m: &Matrix, rp: &[usize], cp: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out[(rp[i], cp[j])] = m[(i, j)];
        }
    }
    out
}

fn random_params(seed: u64, activation: Activation) -> LRParams {
    let mut s = RngStream::new(seed);
    let d = 1 + s.below(6) as usize;
    let dims = Dims {
        n_features: 1 + s.below(6) as usize,
        hidden: 1 + s.below(6) as usize,
        latent: d,
        n_metrics: 1 + s.below(3) as usize,
        arms_per_experiment: (0..1 + s.below(3))
            .map(|_| 2 + s.below(2) as usize)
            .collect(),
    };
    let mut p = LRParams::init(dims, activation, &mut s).unwrap();
    // move the operators away from the identity so every block matters
    for x in p.as_mut_slice() {
        *x += 0.3 * s.std_normal();
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_residual_is_orthogonal(n in 3usize..30, p in 1usize..5, lambda in 0.0f64..2.0, seed in any::<u64>()) {
        prop_assume!(n > p + 1);
        let x = normal_matrix(n, p, seed);
        let y = RngStream::new(seed ^ 1).normal_vec(n);
        let fit = ridge_fit(&x, &y, lambda, true).unwrap();
        let r: Vec<f64> = (0..n).map(|i| y[i] - fit.predict(x.row(i))).collect();
        // normal equations: Σ r = 0 and Xᵀ r = λ β
        let scale = y.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!(r.iter().sum::<f64>().abs() <= 1e-9 * scale);
        for c in 0..p {
            let g: f64 = (0..n).map(|i| x[(i, c)] * r[i]).sum();
            prop_assert!((g - lambda * fit.coef[c]).abs() <= 1e-9 * scale * n as f64, "column {c}: {g} vs {}", lambda * fit.coef[c]);
        }
    }

    #[test]
    fn exact_linear_data_fit_without_ridge(n in 6usize..40, p in 1usize..5, seed in any::<u64>()) {
        let x = normal_matrix(n, p, seed);
        let beta = RngStream::new(seed ^ 2).normal_vec(p);
        let y: Vec<f64> = (0..n).map(|i| 0.7 + x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).collect();
        let fit = ridge_fit(&x, &y, 0.0, true).unwrap();
        for i in 0..n {
            prop_assert!((fit.predict(x.row(i)) - y[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn singular_values_ignore_permutations(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
        let m = normal_matrix(rows, cols, seed);
        let k = rows.min(cols);
        let a = singular_values(&m, k).unwrap();
        let b = singular_values(&permute(&m, &permutation(rows, seed ^ 3), &permutation(cols, seed ^ 4)), k).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10 * a[0].max(1.0));
        }
    }

    #[test]
    fn singular_values_match_nalgebra(rows in 1usize..15, cols in 1usize..15, seed in any::<u64>()) {
        let m = normal_matrix(rows, cols, seed);
        let ours = jacobi_svd(&m).s;
        let na = nalgebra::DMatrix::from_row_slice(rows, cols, m.as_slice());
        let mut theirs: Vec<f64> = na.singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert_eq!(ours.len(), theirs.len());
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= 1e-10 * theirs[0].max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn pehe_zero_symmetric_and_quadratic(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20), c in -5.0f64..5.0) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assert_eq!(pehe(&a, &a).unwrap(), 0.0);
        let base = pehe(&a, &b).unwrap();
        // errors b − a reflected to a − b
        let mirrored: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        prop_assert!((pehe(&a, &mirrored).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
        let scaled: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * (y - x)).collect();
        prop_assert!((pehe(&a, &scaled).unwrap() - c * c * base).abs() <= 1e-10 * (c * c * base).max(1.0));
    }

    #[test]
    fn correlation_symmetric_unit_diagonal(rows in 2usize..20, cols in 1usize..8, seed in any::<u64>()) {
        let m = normal_matrix(rows, cols, seed);
        let c = ite_correlation_matrix(&m).unwrap().matrix;
        for i in 0..cols {
            prop_assert!((c[(i, i)] - 1.0).abs() <= 1e-12);
            for j in 0..cols {
                prop_assert!((c[(i, j)] - c[(j, i)]).abs() <= 1e-12);
                prop_assert!(c[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn split_fractions_give_disjoint_sized_splits(
        n in 0usize..300,
        f in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        seed in any::<u64>(),
    ) {
        let total = f.0 + f.1 + f.2;
        let s = if total > 1.0 { 1.0 / total } else { 1.0 };
        let fr = SplitFractions { train: f.0 * s, validation: f.1 * s, test: f.2 * s };
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
        let splits = split_units(&ids, fr, &mut RngStream::new(seed)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (part, frac) in [(&splits.train, fr.train), (&splits.validation, fr.validation), (&splits.test, fr.test)] {
            prop_assert!((part.len() as f64 - frac * n as f64).abs() <= 1.0 + 1e-9);
            for id in part.iter() {
                prop_assert!(seen.insert(*id), "unit {id} in two splits");
                prop_assert!(ids.contains(id));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cate_is_outcome_difference(seed in any::<u64>(), relu in any::<bool>()) {
        let act = if relu { Activation::Relu } else { Activation::Identity };
        let p = random_params(seed, act);
        let dims = p.dims().clone();
        let mut s = RngStream::new(seed ^ 5);
        let x = s.normal_vec(dims.n_features);
        for j in 0..dims.n_metrics {
            for (k, &arms) in dims.arms_per_experiment.iter().enumerate() {
                let y0 = p.predict_outcome(&x, j, k, 0).unwrap();
                for t in 1..arms {
                    let diff = p.predict_outcome(&x, j, k, t).unwrap() - y0;
                    let cate = p.predict_cate(&x, j, k, t).unwrap();
                    prop_assert!((cate - diff).abs() <= 1e-12 * diff.abs().max(1.0), "{cate} vs {diff}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Scaling v(x) by c (through the last layer) and every arm embedding by
    /// 1/c leaves outcomes and CATEs unchanged.
    #[test]
    fn embedding_gauge(seed in any::<u64>(), c in prop_oneof![0.1f64..10.0, -10.0f64..-0.1]) {
        let p = random_params(seed, Activation::Relu);
        let dims = p.dims().clone();
        let mut q = p.clone();
        q.w2_mut().iter_mut().for_each(|w| *w *= c);
        q.b2_mut().iter_mut().for_each(|b| *b *= c);
        for (k, &arms) in dims.arms_per_experiment.iter().enumerate() {
            for t in 0..arms {
                q.arm_mut(k, t).iter_mut().for_each(|e| *e /= c);
            }
        }
        let x = RngStream::new(seed ^ 6).normal_vec(dims.n_features);
        for j in 0..dims.n_metrics {
            for (k, &arms) in dims.arms_per_experiment.iter().enumerate() {
                for t in 1..arms {
                    let a = p.predict_cate(&x, j, k, t).unwrap();
                    let b = q.predict_cate(&x, j, k, t).unwrap();
                    prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Permuting rows and columns together with the fold assignment leaves
    /// the selected rank unchanged.
    #[test]
    fn bcv_rank_ignores_permutations(seed in any::<u64>(), rank in 1usize..4) {
        let (rows, cols, folds) = (30, 12, 5);
        let mut s = RngStream::new(seed);
        let m = planted_low_rank(rows, cols, rank, 20.0, &mut s);
        let assign = speckled_folds(rows, cols, folds, &mut s).unwrap();
        let (rp, cp) = (permutation(rows, seed ^ 7), permutation(cols, seed ^ 8));
        let mut assign_p = vec![0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                assign_p[rp[i] * cols + cp[j]] = assign[i * cols + j];
            }
        }
        let a = bcv_with_folds(&m, &assign, folds, Some(5), &mut RngStream::new(9)).unwrap();
        let b = bcv_with_folds(&permute(&m, &rp, &cp), &assign_p, folds, Some(5), &mut RngStream::new(9)).unwrap();
        prop_assert_eq!(a.selected_rank, b.selected_rank, "{:?} vs {:?}", a.mean_errors, b.mean_errors);
        for (x, y) in a.mean_errors.iter().zip(&b.mean_errors) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12), "{x} vs {y}");
        }
    }
}

#[test]
fn bcv_planted_rank_beats_rank_one() {
    let mut wins = 0;
    let trials = 20;
    for seed in 0..trials {
        let mut s = RngStream::new(1000 + seed);
        let rank = 2 + (seed % 3) as usize;
        let m = planted_low_rank(60, 20, rank, 10.0, &mut s);
        let assign = speckled_folds(60, 20, 5, &mut s).unwrap();
        let rep = bcv_with_folds(&m, &assign, 5, Some(rank), &mut s).unwrap();
        if rep.mean_errors[rank - 1] <= rep.mean_errors[0] {
            wins += 1;
        }
    }
    assert!(wins * 100 >= 95 * trials, "{wins}/{trials}");
}

#[test]
fn semisynth_arms_are_balanced() {
    // |#treated − #control| ≤ 4√n per experiment, over 100 seeds
    let (features, logits) = classifier_fixture(800, 6, 4, 3, 11);
    let mut ok = 0;
    for seed in 0..100 {
        let cfg = SemiSynthConfig {
            assign_prob: 0.5,
            seed,
            ..SemiSynthConfig::default()
        };
        let ds = semisynth_from_logits(&features, &logits, &cfg).unwrap();
        let balanced = (0..ds.n_experiments()).all(|k| {
            let arms: Vec<usize> = ds
                .observations
                .iter()
                .filter(|o| o.experiment == k)
                .map(|o| o.arm)
                .collect();
            let treated = arms.iter().filter(|&&a| a == 1).count() as f64;
            let n = arms.len() as f64;
            (2.0 * treated - n).abs() <= 4.0 * n.sqrt()
        });
        ok += usize::from(balanced);
    }
    assert!(ok >= 99, "{ok}/100 seeds balanced");
}

#[test]
fn semisynth_enrolment_rate_concentrates() {
    let (features, logits) = classifier_fixture(50_000, 4, 4, 2, 12);
    let ds = semisynth_from_logits(&features, &logits, &SemiSynthConfig::default()).unwrap();
    for k in 0..ds.n_experiments() {
        let enrolled = ds.observations.iter().filter(|o| o.experiment == k).count() as f64;
        let rate = enrolled / 50_000.0;
        assert!((rate - 0.1).abs() <= 0.005, "experiment {k}: rate {rate}");
    }
}
