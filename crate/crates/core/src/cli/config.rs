//! Resolved run configurations. Every field has a default; a JSON config
//! file overrides defaults and command-line flags override the file. The
//! resolved value is echoed as `config.json` in the output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::SplitFractions;
use crate::error::{Error, Result};
use crate::evaluate::NUISANCE_REG;
use crate::lrlearner::HyperConfig;
use crate::rank::DEFAULT_FOLDS;
use crate::synthgen::{SemiSynthConfig, SynthConfig};
use crate::tlearner::DEFAULT_T_LAMBDA;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemisynthRunConfig {
    pub features: Option<PathBuf>,
    pub logits: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub semi: SemiSynthConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Continue from a saved model instead of a fresh initialization.
    pub init_model: Option<PathBuf>,
    /// Predict every unit in every experiment, not only its enrolments.
    pub all_experiments: bool,
    #[serde(flatten)]
    pub hyper: HyperConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineRunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lambda: f64,
    pub all_experiments: bool,
}

impl Default for BaselineRunConfig {
    fn default() -> Self {
        BaselineRunConfig {
            data: None,
            out: None,
            lambda: DEFAULT_T_LAMBDA,
            all_experiments: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRunConfig {
    pub data: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// `auto` (test, else val, else all units), `train`, `val`, `test` or `all`.
    pub split: String,
    pub tau: bool,
    pub nuisance_reg: f64,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        EvalRunConfig {
            data: None,
            predictions: None,
            out: None,
            split: "auto".into(),
            tau: false,
            nuisance_reg: NUISANCE_REG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankRunConfig {
    /// A headered numeric CSV holding the matrix directly.
    pub matrix: Option<PathBuf>,
    /// Predicted outcomes; units with a CATE in every experiment form the rows.
    pub predictions: Option<PathBuf>,
    /// Dataset whose ground-truth ITEs form the matrix.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Restrict to one metric (all metrics otherwise).
    pub metric: Option<usize>,
    pub arm: usize,
    pub folds: usize,
    pub max_rank: Option<usize>,
    pub seed: u64,
}

impl Default for RankRunConfig {
    fn default() -> Self {
        RankRunConfig {
            matrix: None,
            predictions: None,
            data: None,
            out: None,
            metric: None,
            arm: 1,
            folds: DEFAULT_FOLDS,
            max_rank: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneRunConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Experiment of the dataset treated as the new experiment.
    pub experiment: usize,
    pub metric: usize,
    /// Split whose observations are fitted; `all` uses every unit.
    pub split: String,
}

impl Default for FinetuneRunConfig {
    fn default() -> Self {
        FinetuneRunConfig {
            model: None,
            data: None,
            out: None,
            experiment: 0,
            metric: 0,
            split: "train".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    #[default]
    Mu,
    Tau,
}

impl std::str::FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(RiskKind::Mu),
            "tau" => Ok(RiskKind::Tau),
            other => Err(Error::InvalidArgument(format!(
                "unknown risk {other:?} (mu or tau)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneRunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Explicit grid points, tried in order.
    pub grid: Vec<GridPoint>,
    pub risk: RiskKind,
    /// Base hyperparameters; grid points override learning rate, weight
    /// decay and latent dimension.
    #[serde(flatten)]
    pub hyper: HyperConfig,
}

/// Parses a JSON config file, rejecting unknown top-level keys.
pub fn load_config<T>(path: Option<&Path>) -> Result<T>
where
    T: DeserializeOwned + Serialize + Default,
{
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    let given: BTreeSet<String> = match &value {
        serde_json::Value::Object(map) => map.keys().cloned().collect(),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "config {}: expected a JSON object",
                path.display()
            )))
        }
    };
    let cfg: T = serde_json::from_value(value)
        .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    let known: BTreeSet<String> =
        match serde_json::to_value(T::default()).expect("config serializes") {
            serde_json::Value::Object(map) => map.keys().cloned().collect(),
            _ => BTreeSet::new(),
        };
    let unknown: Vec<&String> = given.iter().filter(|k| !known.contains(*k)).collect();
    if !unknown.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "config {}: unknown keys {unknown:?}",
            path.display()
        )));
    }
    Ok(cfg)
}

/// A required path setting.
pub fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "missing required setting `{key}` (flag --{})",
            key.replace('_', "-")
        ))
    })
}

/// Parses `a,b,c` into split fractions.
pub fn parse_fractions(s: &str) -> Result<SplitFractions> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("split fractions {s:?}: {e}")))?;
    match parts.as_slice() {
        &[train, validation, test] => Ok(SplitFractions {
            train,
            validation,
            test,
        }),
        _ => Err(Error::InvalidArgument(format!(
            "split fractions {s:?}: expected train,val,test"
        ))),
    }
}
