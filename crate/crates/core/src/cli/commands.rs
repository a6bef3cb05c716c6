use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use super::config::{
    load_config, parse_fractions, required, BaselineRunConfig, EvalRunConfig, FinetuneRunConfig,
    GenerateConfig, RankRunConfig, RiskKind, SemisynthRunConfig, TrainRunConfig, TuneRunConfig,
};
use super::{set, set_path, Command};
use crate::dataset::{csv_writer, write_record};
use crate::dataset::{
    fmt_real, ite_slice, read_numeric_csv, write_numeric_csv, Dataset, PredictedTensor, SplitName,
    PREDICTIONS_FILE,
};
use crate::error::{Error, Result};
use crate::evaluate::{
    ite_correlation_matrix, predict_all_experiments, predict_tensor, risk_report, EvalOptions,
    OutcomeModel,
};
use crate::lrlearner::{
    finetune_new_experiment, load_params, save_params, train, LRParams, NewObservation,
};
use crate::numerics::{Matrix, RngStream};
use crate::rank::bcv_effective_rank;
use crate::synthgen::{gen_synthetic, semisynth_from_logits};
use crate::tlearner::fit_all;

/// Runs one parsed subcommand.
pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => {
            let mut c: GenerateConfig = load_config(a.config.as_deref())?;
            set_path(&mut c.out, &a.out);
            let s = &mut c.synth;
            set(&mut s.n_per_arm, a.n_per_arm);
            set(&mut s.latent_dim, a.latent_dim);
            set(&mut s.feature_dim, a.feature_dim);
            set(&mut s.experiments, a.experiments);
            set(&mut s.metrics, a.metrics);
            set(&mut s.noise_sd, a.noise_sd);
            set(&mut s.seed, a.seed);
            set(&mut s.val_per_arm, a.val_per_arm);
            set(&mut s.test_per_arm, a.test_per_arm);
            generate(&c)
        }
        Command::Semisynth(a) => {
            let mut c: SemisynthRunConfig = load_config(a.config.as_deref())?;
            set_path(&mut c.features, &a.features);
            set_path(&mut c.logits, &a.logits);
            set_path(&mut c.out, &a.out);
            set(&mut c.semi.control_class, a.control_class);
            set(&mut c.semi.assign_prob, a.assign_prob);
            set(&mut c.semi.seed, a.seed);
            set(&mut c.semi.full_truth, a.full_truth);
            if let Some(s) = &a.split {
                c.semi.split = parse_fractions(s)?;
            }
            semisynth(&c)
        }
        Command::Train(a) => {
            let mut c: TrainRunConfig = load_config(a.config.as_deref())?;
            set_path(&mut c.data, &a.data);
            set_path(&mut c.out, &a.out);
            set_path(&mut c.init_model, &a.init_model);
            set(&mut c.all_experiments, a.all_experiments);
            a.hyper.apply(&mut c.hyper);
            train_cmd(&c)
        }
        Command::Baseline(a) => {
            let mut c: BaselineRunConfig = load_config(a.config.as_deref())?;
            set_path(&mut c.data, &a.data);
            set_path(&mut c.out, &a.out);
            set(&mut c.lambda, a.lambda);
            set(&mut c.all_experiments, a.all_experiments);
            baseline(&c)
        }
        Command::Eval(a) => {
            let mut c: EvalRunConfig = load_config(a.config.as_deref())?;
            set_path(&mut c.data, &a.data);
            set_path(&mut c.predictions, &a.predictions);
            set_path(&mut c.out, &a.out);
            set(&mut c.split, a.split);
            set(&mut c.tau, a.tau);
            set(&mut c.nuisance_reg, a.nuisance_reg);
            eval(&c)
        }
        Command::Rank(a) => {
            let mut c: RankRunConfig = load_config(a.config.as_deref())?;
            set_path(&mut c.matrix, &a.matrix);
            set_path(&mut c.predictions, &a.predictions);
            set_path(&mut c.data, &a.data);
            set_path(&mut c.out, &a.out);
            if a.metric.is_some() {
                c.metric = a.metric;
            }
            set(&mut c.arm, a.arm);
            set(&mut c.folds, a.folds);
            if a.max_rank.is_some() {
                c.max_rank = a.max_rank;
            }
            set(&mut c.seed, a.seed);
            rank(&c)
        }
        Command::Finetune(a) => {
            let mut c: FinetuneRunConfig = load_config(a.config.as_deref())?;
            set_path(&mut c.model, &a.model);
            set_path(&mut c.data, &a.data);
            set_path(&mut c.out, &a.out);
            set(&mut c.experiment, a.experiment);
            set(&mut c.metric, a.metric);
            set(&mut c.split, a.split);
            finetune(&c)
        }
        Command::Tune(a) => {
            let mut c: TuneRunConfig = load_config(a.config.as_deref())?;
            set_path(&mut c.data, &a.data);
            set_path(&mut c.out, &a.out);
            set(&mut c.risk, a.risk);
            a.hyper.apply(&mut c.hyper);
            if let Some(grid) = a.grid(&c.hyper)? {
                c.grid = grid;
            }
            tune(&c)
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Creates the output directory and echoes the resolved config into it.
fn prepare_out<T: Serialize>(out: &Path, config: &T) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), config)
}

fn parse_split(s: &str) -> Result<Option<SplitName>> {
    match s {
        "all" => Ok(None),
        other => other.parse().map(Some),
    }
}

fn generate(c: &GenerateConfig) -> Result<()> {
    let out = required(&c.out, "out")?;
    let res = gen_synthetic(&c.synth)?;
    let ds = &res.dataset;
    ds.save(out)?;
    write_json(&out.join("config.json"), c)?;
    info!(
        "wrote {} units, {} observations to {}",
        ds.units.len(),
        ds.observations.len(),
        out.display()
    );
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "generate",
            "n_units": ds.units.len(),
            "n_observations": ds.observations.len(),
            "n_experiments": ds.n_experiments(),
            "n_metrics": ds.n_metrics(),
            "n_truth": ds.truth.as_ref().map_or(0, |t| t.len()),
        }),
    )
}

fn semisynth(c: &SemisynthRunConfig) -> Result<()> {
    let out = required(&c.out, "out")?;
    let (_, features) = read_numeric_csv(required(&c.features, "features")?)?;
    let (_, logits) = read_numeric_csv(required(&c.logits, "logits")?)?;
    let ds = semisynth_from_logits(&features, &logits, &c.semi)?;
    ds.save(out)?;
    write_json(&out.join("config.json"), c)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "semisynth",
            "n_units": ds.units.len(),
            "n_observations": ds.observations.len(),
            "n_experiments": ds.n_experiments(),
            "n_truth": ds.truth.as_ref().map_or(0, |t| t.len()),
        }),
    )
}

fn predictions<M: OutcomeModel + ?Sized>(
    model: &M,
    ds: &Dataset,
    all_experiments: bool,
) -> Result<PredictedTensor> {
    if all_experiments {
        predict_all_experiments(model, ds, None)
    } else {
        predict_tensor(model, ds, None)
    }
}

fn train_cmd(c: &TrainRunConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let out = required(&c.out, "out")?;
    c.hyper.validate()?;
    let ds = Dataset::load(data)?;
    let init = c
        .init_model
        .as_deref()
        .map(load_params)
        .transpose()?
        .map(|(p, _)| p);
    prepare_out(out, c)?;
    let (params, report) = train(&ds, &c.hyper, init)?;
    save_params(&out.join("model.json"), &params, Some(&c.hyper))?;
    write_json(&out.join("train_report.json"), &report)?;
    let pred = predictions(&params, &ds, c.all_experiments)?;
    pred.save_csv(&out.join(PREDICTIONS_FILE))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "train",
            "epochs": report.epoch_loss.len(),
            "steps": report.steps,
            "final_loss": report.epoch_loss.last(),
            "validation_mu_risk": report.validation_mu_risk,
            "n_predictions": pred.len(),
        }),
    )
}

fn baseline(c: &BaselineRunConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let out = required(&c.out, "out")?;
    let ds = Dataset::load(data)?;
    prepare_out(out, c)?;
    let model = fit_all(&ds, c.lambda)?;
    let pred = predictions(&model, &ds, c.all_experiments)?;
    pred.save_csv(&out.join(PREDICTIONS_FILE))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "baseline",
            "n_pairs": model.pairs().len(),
            "n_predictions": pred.len(),
        }),
    )
}

fn eval(c: &EvalRunConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let out = required(&c.out, "out")?;
    let ds = Dataset::load(data)?;
    let pred = PredictedTensor::load_csv(required(&c.predictions, "predictions")?)?;
    let split = if c.split == "auto" {
        [SplitName::Test, SplitName::Validation]
            .into_iter()
            .find(|&s| !ds.splits.get(s).is_empty())
    } else {
        parse_split(&c.split)?
    };
    let split_name = split.map_or("all", SplitName::as_str);
    info!("scoring split {split_name}");
    prepare_out(out, c)?;
    let opts = EvalOptions {
        nuisance_reg: c.nuisance_reg,
        tau: c.tau,
    };
    let report = risk_report(&ds, &pred, split, &opts)?;
    report.write_cells_csv(&out.join("risk_cells.csv"))?;
    report.write_summary_csv(&out.join("risk_summary.csv"))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "eval",
            "split": split_name,
            "has_truth": report.has_truth,
            "summary": report.summary,
        }),
    )
}

/// One matrix to analyse: rows are units, columns experiments.
struct Slice {
    metric: Option<usize>,
    columns: Vec<String>,
    matrix: Matrix,
}

fn slices_from_predictions(
    pred: &PredictedTensor,
    metric: Option<usize>,
    arm: usize,
) -> Result<Vec<Slice>> {
    let mut metrics = BTreeSet::new();
    let mut experiments: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    let mut units = Vec::new();
    let mut seen = BTreeSet::new();
    for (u, k, j, t) in pred.keys() {
        if t == arm && metric.is_none_or(|m| m == j) {
            metrics.insert(j);
            experiments.entry(j).or_default().insert(k);
            if seen.insert(u) {
                units.push(u);
            }
        }
    }
    metrics
        .into_iter()
        .map(|j| {
            let ks: Vec<usize> = experiments[&j].iter().copied().collect();
            let complete: Vec<u64> = units
                .iter()
                .copied()
                .filter(|&u| ks.iter().all(|&k| pred.cate(u, k, j, arm).is_some()))
                .collect();
            let matrix = ite_slice(pred, &complete, &ks, j, arm)?;
            Ok(Slice {
                metric: Some(j),
                columns: ks.iter().map(|k| format!("e{k}")).collect(),
                matrix,
            })
        })
        .collect()
}

fn slices_from_truth(ds: &Dataset, metric: Option<usize>, arm: usize) -> Result<Vec<Slice>> {
    let truth = ds
        .truth
        .as_ref()
        .ok_or_else(|| Error::Missing(format!("dataset {} has no ground truth", ds.units.len())))?;
    let metrics: Vec<usize> = match metric {
        Some(j) if j >= ds.n_metrics() => {
            return Err(Error::Index(format!("metric {j} of {}", ds.n_metrics())))
        }
        Some(j) => vec![j],
        None => (0..ds.n_metrics()).collect(),
    };
    metrics
        .into_iter()
        .map(|j| {
            let mut counts: HashMap<u64, usize> = HashMap::new();
            let mut ks = BTreeSet::new();
            for r in truth
                .rows()
                .iter()
                .filter(|r| r.metric == j && r.arm == arm)
            {
                *counts.entry(r.unit_id).or_default() += 1;
                ks.insert(r.experiment);
            }
            let ks: Vec<usize> = ks.into_iter().collect();
            let complete: Vec<u64> = ds
                .units
                .ids()
                .iter()
                .copied()
                .filter(|u| counts.get(u) == Some(&ks.len()))
                .collect();
            let matrix = ite_slice(truth, &complete, &ks, j, arm)?;
            Ok(Slice {
                metric: Some(j),
                columns: ks.iter().map(|k| format!("e{k}")).collect(),
                matrix,
            })
        })
        .collect()
}

fn rank(c: &RankRunConfig) -> Result<()> {
    let out = required(&c.out, "out")?;
    let sources = [
        c.matrix.is_some(),
        c.predictions.is_some(),
        c.data.is_some(),
    ];
    if sources.iter().filter(|&&b| b).count() != 1 {
        return Err(Error::InvalidArgument(
            "rank needs exactly one of --matrix, --predictions, --data".into(),
        ));
    }
    let slices = if let Some(p) = &c.matrix {
        let (columns, matrix) = read_numeric_csv(p)?;
        vec![Slice {
            metric: None,
            columns,
            matrix,
        }]
    } else if let Some(p) = &c.predictions {
        slices_from_predictions(&PredictedTensor::load_csv(p)?, c.metric, c.arm)?
    } else {
        slices_from_truth(&Dataset::load(required(&c.data, "data")?)?, c.metric, c.arm)?
    };
    if slices.is_empty() {
        return Err(Error::Missing(format!("no CATEs for arm {}", c.arm)));
    }
    for s in &slices {
        if s.matrix.rows() < 2 || s.matrix.cols() < 2 {
            return Err(Error::Missing(format!(
                "metric {}: only {} units have a CATE in all {} experiments; \
                 predict with `train --all-experiments` or use full ground truth",
                s.metric.unwrap_or(0),
                s.matrix.rows(),
                s.matrix.cols()
            )));
        }
    }
    prepare_out(out, c)?;
    let root = RngStream::new(c.seed);
    let summary_path = out.join("rank_summary.csv");
    let mut w = csv_writer(&summary_path)?;
    write_record(
        &mut w,
        &summary_path,
        [
            "metric_id",
            "n_rows",
            "n_cols",
            "selected_rank",
            "top_singular_value",
        ],
    )?;
    let mut entries = Vec::new();
    for s in &slices {
        let (m, tag) = match s.metric {
            Some(j) => (j, format!("_m{j}")),
            None => (0, String::new()),
        };
        info!(
            "metric {m}: {}x{} ITE matrix",
            s.matrix.rows(),
            s.matrix.cols()
        );
        let mut stream = root.derive(m as u64);
        let mut report = bcv_effective_rank(&s.matrix, c.folds, c.max_rank, &mut stream)?;
        report.metric = s.metric;
        report.write_spectrum_csv(&out.join(format!("spectrum{tag}.csv")))?;
        report.write_bcv_csv(&out.join(format!("bcv{tag}.csv")))?;
        let corr = ite_correlation_matrix(&s.matrix)?;
        if !corr.flagged.is_empty() {
            warn!("metric {m}: constant ITE columns get zero correlation");
        }
        write_numeric_csv(
            &out.join(format!("correlation{tag}.csv")),
            &s.columns,
            &corr.matrix,
        )?;
        let top = report.singular_values.first().copied().unwrap_or(0.0);
        write_record(
            &mut w,
            &summary_path,
            [
                s.metric.map_or_else(|| "all".into(), |j| j.to_string()),
                s.matrix.rows().to_string(),
                s.matrix.cols().to_string(),
                report.selected_rank.to_string(),
                fmt_real(top),
            ],
        )?;
        let constant: Vec<&String> = corr.flagged.iter().map(|&i| &s.columns[i]).collect();
        entries.push(json!({
            "metric": s.metric,
            "n_rows": s.matrix.rows(),
            "n_cols": s.matrix.cols(),
            "selected_rank": report.selected_rank,
            "mean_errors": report.mean_errors,
            "constant_columns": constant,
        }));
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;
    write_json(
        &out.join("summary.json"),
        &json!({ "command": "rank", "metrics": entries }),
    )
}

fn finetune(c: &FinetuneRunConfig) -> Result<()> {
    let out = required(&c.out, "out")?;
    let (params, _) = load_params(required(&c.model, "model")?)?;
    let ds = Dataset::load(required(&c.data, "data")?)?;
    if c.experiment >= ds.n_experiments() || c.metric >= ds.n_metrics() {
        return Err(Error::Index(format!(
            "experiment {} / metric {} (dataset has {} / {})",
            c.experiment,
            c.metric,
            ds.n_experiments(),
            ds.n_metrics()
        )));
    }
    let split = parse_split(&c.split)?;
    let feats = ds.units.features();
    let rows = ds.rows(split)?;
    let obs: Vec<NewObservation> = rows
        .iter()
        .filter(|r| r.experiment == c.experiment && r.metric == c.metric)
        .map(|r| NewObservation {
            x: feats.row(r.unit_row),
            arm: r.arm,
            value: r.value,
        })
        .collect();
    let n_arms = ds.n_arms(c.experiment);
    let fit = finetune_new_experiment(&params, &obs, n_arms)?;
    prepare_out(out, c)?;
    write_json(
        &out.join("embeddings.json"),
        &json!({
            "experiment": c.experiment,
            "metric": c.metric,
            "embeddings": fit.embeddings,
        }),
    )?;
    let mut pred = PredictedTensor::new();
    let mut seen = BTreeSet::new();
    for r in ds
        .rows(None)?
        .iter()
        .filter(|r| r.experiment == c.experiment)
    {
        let u = ds.units.ids()[r.unit_row];
        if seen.insert(u) {
            let x = feats.row(r.unit_row);
            for t in 0..n_arms {
                pred.insert(u, c.experiment, c.metric, t, fit.outcome(&params, x, t)?);
            }
        }
    }
    pred.save_csv(&out.join(PREDICTIONS_FILE))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "finetune",
            "n_obs": obs.len(),
            "counts": fit.counts,
            "residual_rms": fit.residual_rms,
        }),
    )
}

fn tune(c: &TuneRunConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let out = required(&c.out, "out")?;
    if c.grid.is_empty() {
        return Err(Error::InvalidArgument(
            "empty grid: give `grid` in the config, --point, or --learning-rates/--weight-decays/--latent-dims".into(),
        ));
    }
    let ds = Dataset::load(data)?;
    if ds.splits.get(SplitName::Validation).is_empty() {
        return Err(Error::InvalidArgument(
            "tune needs a non-empty validation split".into(),
        ));
    }
    let points: Vec<_> = c
        .grid
        .iter()
        .map(|p| {
            let mut h = c.hyper.clone();
            h.learning_rate = p.learning_rate;
            h.weight_decay = p.weight_decay;
            h.latent_dim = p.latent_dim;
            h.validate().map(|_| h)
        })
        .collect::<Result<_>>()?;
    prepare_out(out, c)?;
    let opts = EvalOptions {
        tau: c.risk == RiskKind::Tau,
        ..EvalOptions::default()
    };
    let board_path = out.join("leaderboard.csv");
    let mut w = csv_writer(&board_path)?;
    let mut header = vec![
        "point".to_string(),
        "learning_rate".into(),
        "weight_decay".into(),
        "latent_dim".into(),
    ];
    header.extend((0..ds.n_metrics()).map(|j| format!("risk_m{j}")));
    header.push("mean_risk".into());
    write_record(&mut w, &board_path, &header)?;

    let mut best: Option<(usize, f64, LRParams)> = None;
    for (i, h) in points.iter().enumerate() {
        info!(
            "grid point {i}: lr {} wd {} d {}",
            h.learning_rate, h.weight_decay, h.latent_dim
        );
        let risks = match train(&ds, h, None) {
            Ok((params, _)) => {
                let pred = predict_tensor(&params, &ds, Some(SplitName::Validation))?;
                let report = risk_report(&ds, &pred, Some(SplitName::Validation), &opts)?;
                let per_metric: Vec<f64> = report
                    .summary
                    .iter()
                    .filter(|s| s.metric.is_some())
                    .map(|s| match c.risk {
                        RiskKind::Mu => s.mu_risk,
                        RiskKind::Tau => s.tau_risk,
                    })
                    .map(|r| r.unwrap_or(f64::NAN))
                    .collect();
                let present: Vec<f64> = per_metric
                    .iter()
                    .copied()
                    .filter(|r| r.is_finite())
                    .collect();
                let mean = if present.is_empty() {
                    f64::NAN
                } else {
                    present.iter().sum::<f64>() / present.len() as f64
                };
                if mean.is_finite() && best.as_ref().is_none_or(|(_, b, _)| mean < *b) {
                    best = Some((i, mean, params));
                }
                (per_metric, mean)
            }
            Err(e) if e.is_numerical() => {
                warn!("grid point {i}: {e}");
                (vec![f64::NAN; ds.n_metrics()], f64::NAN)
            }
            Err(e) => return Err(e),
        };
        let mut rec = vec![
            i.to_string(),
            fmt_real(h.learning_rate),
            fmt_real(h.weight_decay),
            h.latent_dim.to_string(),
        ];
        rec.extend(risks.0.iter().map(|&r| fmt_real(r)));
        rec.push(fmt_real(risks.1));
        write_record(&mut w, &board_path, rec)?;
    }
    w.flush().map_err(|e| Error::io(&board_path, e))?;
    let (idx, risk, params) = best.ok_or(Error::Divergence {
        epoch: 0,
        step: 0,
        loss: f64::NAN,
    })?;
    save_params(&out.join("best_model.json"), &params, Some(&points[idx]))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "tune",
            "risk": c.risk,
            "best_index": idx,
            "best_point": c.grid[idx],
            "best_mean_risk": risk,
        }),
    )
}
