use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, RidgeSystem};

use super::params::LRParams;

/// Ridge penalty of the per-arm least-squares fit, whose bias is then
/// removed by a few refinement passes.
pub const FINETUNE_REG: f64 = 1e-8;
const REFINE_STEPS: usize = 3;

/// One observation from a new experiment.
#[derive(Debug, Clone, Copy)]
pub struct NewObservation<'a> {
    pub x: &'a [f64],
    pub arm: usize,
    pub value: f64,
}

/// Arm embeddings of a new experiment on top of a frozen feature extractor:
/// outcomes are `v(x)ᵀ eᵗ_new`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    pub embeddings: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    /// Root mean squared in-sample residual.
    pub residual_rms: f64,
}

impl FinetuneResult {
    pub fn outcome(&self, params: &LRParams, x: &[f64], arm: usize) -> Result<f64> {
        let e = self.embeddings.get(arm).ok_or_else(|| {
            Error::Index(format!(
                "arm {arm} (new experiment has {})",
                self.embeddings.len()
            ))
        })?;
        Ok(dot(&params.embed_unit(x)?, e))
    }

    pub fn cate(&self, params: &LRParams, x: &[f64], arm: usize) -> Result<f64> {
        if arm == 0 {
            return Err(Error::InvalidArgument(
                "CATE needs a treated arm (t >= 1)".into(),
            ));
        }
        let v = params.embed_unit(x)?;
        let e = self.embeddings.get(arm).ok_or_else(|| {
            Error::Index(format!(
                "arm {arm} (new experiment has {})",
                self.embeddings.len()
            ))
        })?;
        Ok(v.iter()
            .zip(e)
            .zip(&self.embeddings[0])
            .map(|((v, a), b)| v * (a - b))
            .sum())
    }
}

/// Fits `eᵗ_new` for every arm by regressing `y` on the frozen embeddings
/// `v(x)` without intercept. `params` is not modified.
pub fn finetune_new_experiment(
    params: &LRParams,
    obs: &[NewObservation],
    n_arms: usize,
) -> Result<FinetuneResult> {
    if n_arms == 0 {
        return Err(Error::InvalidArgument(
            "new experiment needs at least one arm".into(),
        ));
    }
    let d = params.dims().latent;
    let mut per_arm: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_arms];
    for o in obs {
        if o.arm >= n_arms {
            return Err(Error::Index(format!(
                "arm {} (new experiment has {n_arms})",
                o.arm
            )));
        }
        let v = params.embed_unit(o.x)?;
        per_arm[o.arm].0.extend_from_slice(&v);
        per_arm[o.arm].1.push(o.value);
    }
    let mut embeddings = Vec::with_capacity(n_arms);
    let mut counts = Vec::with_capacity(n_arms);
    let mut sse = 0.0;
    for (arm, (z, y)) in per_arm.into_iter().enumerate() {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidArgument(format!(
                "arm {arm} of the new experiment has no observations"
            )));
        }
        if n < d {
            log::warn!("arm {arm}: {n} observations for {d} embedding coordinates; the fit is ridge-determined");
        }
        let z = Matrix::from_vec(n, d, z)?;
        let sys = RidgeSystem::new(&z, FINETUNE_REG, false)?;
        let mut coef = sys.solve(&y)?.coef;
        // iterated Tikhonov: each pass shrinks the ridge bias by λ/(σ² + λ)
        for _ in 0..REFINE_STEPS {
            let resid: Vec<f64> = y
                .iter()
                .enumerate()
                .map(|(i, &yi)| yi - dot(z.row(i), &coef))
                .collect();
            let step = sys.solve(&resid)?.coef;
            coef.iter_mut().zip(&step).for_each(|(c, s)| *c += s);
        }
        for (i, &yi) in y.iter().enumerate() {
            sse += (dot(z.row(i), &coef) - yi).powi(2);
        }
        embeddings.push(coef);
        counts.push(n);
    }
    let residual_rms = (sse / obs.len() as f64).sqrt();
    Ok(FinetuneResult {
        embeddings,
        counts,
        residual_rms,
    })
}
