//! The `hte` command-line tool.
//!
//! Every subcommand resolves its configuration from defaults, an optional
//! `--config` JSON file and flags (in increasing priority), echoes it as
//! `config.json` in the output directory and writes a `summary.json` next
//! to its artifacts. Exit codes: 0 success, 2 invalid input or
//! configuration, 3 numerical failure.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::lrlearner::HyperConfig;
use config::{GridPoint, RiskKind};

pub use commands::run;

#[derive(Debug, Parser)]
#[command(
    name = "hte",
    version,
    about = "Low-rank CATE estimation across many experiments and metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-experiment dataset with ground truth.
    Generate(GenerateArgs),
    /// Build a semi-synthetic dataset from classifier features and logits.
    Semisynth(SemisynthArgs),
    /// Train the low-rank learner and write its predictions.
    Train(TrainArgs),
    /// Fit independent T-learners and write their predictions.
    Baseline(BaselineArgs),
    /// Score predictions: PEHE (with ground truth), μ-risk, τ-risk.
    Eval(EvalArgs),
    /// Singular spectra, correlations and BCV effective rank of ITE matrices.
    Rank(RankArgs),
    /// Fit arm embeddings of a new experiment on a frozen feature extractor.
    Finetune(FinetuneArgs),
    /// Grid search over learning rate, weight decay and latent dimension.
    Tune(TuneArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_per_arm: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub experiments: Option<usize>,
    #[arg(long)]
    pub metrics: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_per_arm: Option<usize>,
    #[arg(long)]
    pub test_per_arm: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SemisynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Headered CSV of unit features (n × p).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Headered CSV of class logits (n × classes).
    #[arg(long)]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub control_class: Option<usize>,
    #[arg(long)]
    pub assign_prob: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Unit split fractions `train,val,test`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub full_truth: Option<bool>,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop the ReLU of the feature network.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub linear: Option<bool>,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    #[arg(long)]
    pub final_lr_scale: Option<f64>,
}

impl HyperArgs {
    fn apply(&self, h: &mut HyperConfig) {
        set(&mut h.learning_rate, self.learning_rate);
        set(&mut h.weight_decay, self.weight_decay);
        set(&mut h.latent_dim, self.latent_dim);
        if self.hidden_dim.is_some() {
            h.hidden_dim = self.hidden_dim;
        }
        set(&mut h.epochs, self.epochs);
        set(&mut h.batch_size, self.batch_size);
        set(&mut h.seed, self.seed);
        set(&mut h.linear, self.linear);
        set(&mut h.final_lr_scale, self.final_lr_scale);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub init_model: Option<PathBuf>,
    /// Predict every unit in every experiment.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub all_experiments: Option<bool>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ridge penalty of every T-learner model.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub all_experiments: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// auto, train, val, test or all.
    #[arg(long)]
    pub split: Option<String>,
    /// Also compute τ-risk.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub tau: Option<bool>,
    #[arg(long)]
    pub nuisance_reg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub metric: Option<usize>,
    #[arg(long)]
    pub arm: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub max_rank: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub experiment: Option<usize>,
    #[arg(long)]
    pub metric: Option<usize>,
    /// train, val, test or all.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid point `learning_rate,weight_decay,latent_dim`; repeatable.
    #[arg(long = "point")]
    pub points: Vec<String>,
    /// Learning-rate axis of a product grid.
    #[arg(long, value_delimiter = ',')]
    pub learning_rates: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub weight_decays: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub latent_dims: Vec<usize>,
    /// Validation risk to minimize: mu or tau.
    #[arg(long)]
    pub risk: Option<RiskKind>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

impl TuneArgs {
    /// Grid points given on the command line, if any.
    fn grid(&self, base: &HyperConfig) -> Result<Option<Vec<GridPoint>>> {
        let mut grid = Vec::new();
        for p in &self.points {
            let parts: Vec<&str> = p.split(',').map(str::trim).collect();
            let bad = || Error::InvalidArgument(format!("grid point {p:?}: expected lr,wd,d"));
            let [lr, wd, d] = parts.as_slice() else {
                return Err(bad());
            };
            grid.push(GridPoint {
                learning_rate: lr.parse().map_err(|_| bad())?,
                weight_decay: wd.parse().map_err(|_| bad())?,
                latent_dim: d.parse().map_err(|_| bad())?,
            });
        }
        if !(self.learning_rates.is_empty()
            && self.weight_decays.is_empty()
            && self.latent_dims.is_empty())
        {
            let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
            let lrs = or(&self.learning_rates, base.learning_rate);
            let wds = or(&self.weight_decays, base.weight_decay);
            let ds = if self.latent_dims.is_empty() {
                vec![base.latent_dim]
            } else {
                self.latent_dims.clone()
            };
            for &learning_rate in &lrs {
                for &weight_decay in &wds {
                    for &latent_dim in &ds {
                        grid.push(GridPoint {
                            learning_rate,
                            weight_decay,
                            latent_dim,
                        });
                    }
                }
            }
        }
        Ok((!grid.is_empty()).then_some(grid))
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}
