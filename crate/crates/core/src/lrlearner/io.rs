use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{Activation, Dims, LRParams};
use super::train::HyperConfig;

pub const MODEL_FORMAT: &str = "lr-learner";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dims: Dims,
    activation: Activation,
    hyper: Option<HyperConfig>,
    blocks: Blocks,
}

#[derive(Serialize, Deserialize)]
struct Blocks {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    /// `[experiment][arm][coordinate]`
    arm_embeddings: Vec<Vec<Vec<f64>>>,
    /// `[metric]`, each row-major d×d
    operators: Vec<Vec<f64>>,
}

/// Writes the model as JSON. Floats are written in shortest round-trip form,
/// so a load reproduces every parameter bit for bit.
pub fn save_params(path: &Path, params: &LRParams, hyper: Option<&HyperConfig>) -> Result<()> {
    let dims = params.dims().clone();
    let blocks = Blocks {
        w1: params.w1().to_vec(),
        b1: params.b1().to_vec(),
        w2: params.w2().to_vec(),
        b2: params.b2().to_vec(),
        arm_embeddings: dims
            .arms_per_experiment
            .iter()
            .enumerate()
            .map(|(k, &arms)| (0..arms).map(|t| params.arm(k, t).to_vec()).collect())
            .collect(),
        operators: (0..dims.n_metrics)
            .map(|j| params.operator(j).to_vec())
            .collect(),
    };
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        dims,
        activation: params.activation(),
        hyper: hyper.cloned(),
        blocks,
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Corrupt {
        path: path.into(),
        msg: format!("cannot serialize model: {e}"),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<(LRParams, Option<HyperConfig>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |msg: String| Error::Corrupt {
        path: path.into(),
        msg,
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let format = value
        .get("format")
        .and_then(|v| v.as_str())
        .unwrap_or_default();
    if format != MODEL_FORMAT {
        return Err(corrupt(format!("not an {MODEL_FORMAT} model file")));
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(MODEL_VERSION)) {
        return Err(Error::Version {
            found: version.map_or_else(|| "none".into(), |v| v.to_string()),
            expected: MODEL_VERSION.to_string(),
        });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    let dims = file.dims;
    let (m, h, d) = (dims.n_features, dims.hidden, dims.latent);
    let b = file.blocks;
    let check = |name: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(corrupt(format!(
                "block {name} has {got} values, expected {want}"
            )))
        }
    };
    check("w1", b.w1.len(), h * m)?;
    check("b1", b.b1.len(), h)?;
    check("w2", b.w2.len(), d * h)?;
    check("b2", b.b2.len(), d)?;
    check(
        "arm_embeddings",
        b.arm_embeddings.len(),
        dims.n_experiments(),
    )?;
    check("operators", b.operators.len(), dims.n_metrics)?;
    let mut data = Vec::new();
    data.extend(b.w1);
    data.extend(b.b1);
    data.extend(b.w2);
    data.extend(b.b2);
    for (k, arms) in b.arm_embeddings.into_iter().enumerate() {
        check(
            "arm_embeddings experiment",
            arms.len(),
            dims.arms_per_experiment[k],
        )?;
        for e in arms {
            check("arm embedding", e.len(), d)?;
            data.extend(e);
        }
    }
    for op in b.operators {
        check("operator", op.len(), d * d)?;
        data.extend(op);
    }
    let params =
        LRParams::from_parts(dims, file.activation, data).map_err(|e| corrupt(e.to_string()))?;
    if !params.is_finite() {
        return Err(corrupt("non-finite parameter".into()));
    }
    Ok((params, file.hyper))
}
