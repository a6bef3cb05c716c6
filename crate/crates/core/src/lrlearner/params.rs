use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// No nonlinearity: the feature network is linear.
    Identity,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Identity => a,
        }
    }

    /// Derivative, with the ReLU subgradient at 0 taken as 0.
    #[inline]
    pub(crate) fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Shape of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_features: usize,
    pub hidden: usize,
    pub latent: usize,
    pub n_metrics: usize,
    /// Arms per experiment, control included.
    pub arms_per_experiment: Vec<usize>,
}

impl Dims {
    pub fn n_experiments(&self) -> usize {
        self.arms_per_experiment.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.hidden == 0 || self.latent == 0 || self.n_metrics == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if self.arms_per_experiment.iter().any(|&a| a == 0) {
            return Err(Error::InvalidArgument(
                "every experiment needs at least one arm".into(),
            ));
        }
        Ok(())
    }
}

/// All model parameters in one flat buffer:
/// `[W₁ (h×m) | b₁ (h) | W₂ (d×h) | b₂ (d) | arm embeddings | operators]`.
/// Arm embeddings are stored experiment-major, `d` values per arm; each
/// operator is a row-major `d×d` block. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct LRParams {
    dims: Dims,
    activation: Activation,
    arm_offsets: Vec<usize>,
    data: Vec<f64>,
}

impl LRParams {
    pub fn zeros(dims: Dims, activation: Activation) -> Result<Self> {
        dims.validate()?;
        let (m, h, d) = (dims.n_features, dims.hidden, dims.latent);
        let mut arm_offsets = Vec::with_capacity(dims.n_experiments());
        let mut off = h * m + h + d * h + d;
        for &arms in &dims.arms_per_experiment {
            arm_offsets.push(off);
            off += arms * d;
        }
        let len = off + dims.n_metrics * d * d;
        Ok(LRParams {
            dims,
            activation,
            arm_offsets,
            data: vec![0.0; len],
        })
    }

    /// Network weights uniform in ±1/√fan_in, biases 0, arm embeddings
    /// N(0, 1/d), operators I + N(0, 0.01/d).
    pub fn init(dims: Dims, activation: Activation, stream: &mut RngStream) -> Result<Self> {
        let mut p = LRParams::zeros(dims, activation)?;
        let (m, h, d) = (p.dims.n_features, p.dims.hidden, p.dims.latent);
        let r1 = 1.0 / (m as f64).sqrt();
        for w in p.w1_mut() {
            *w = r1 * (2.0 * stream.uniform01() - 1.0);
        }
        let r2 = 1.0 / (h as f64).sqrt();
        for w in p.w2_mut() {
            *w = r2 * (2.0 * stream.uniform01() - 1.0);
        }
        let arm_sd = (1.0 / d as f64).sqrt();
        let arms = p.arms_range();
        for x in &mut p.data[arms] {
            *x = arm_sd * stream.std_normal();
        }
        let op_sd = (0.01 / d as f64).sqrt();
        for j in 0..p.dims.n_metrics {
            let block = p.operator_mut(j);
            for (idx, x) in block.iter_mut().enumerate() {
                let diag = if idx / d == idx % d { 1.0 } else { 0.0 };
                *x = diag + op_sd * stream.std_normal();
            }
        }
        Ok(p)
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn zeros_like(&self) -> LRParams {
        LRParams {
            dims: self.dims.clone(),
            activation: self.activation,
            arm_offsets: self.arm_offsets.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn w1_range(&self) -> Range<usize> {
        0..self.dims.hidden * self.dims.n_features
    }

    fn b1_range(&self) -> Range<usize> {
        let s = self.w1_range().end;
        s..s + self.dims.hidden
    }

    fn w2_range(&self) -> Range<usize> {
        let s = self.b1_range().end;
        s..s + self.dims.latent * self.dims.hidden
    }

    fn b2_range(&self) -> Range<usize> {
        let s = self.w2_range().end;
        s..s + self.dims.latent
    }

    fn arms_range(&self) -> Range<usize> {
        self.b2_range().end..self.ops_start()
    }

    fn ops_start(&self) -> usize {
        self.data.len() - self.dims.n_metrics * self.dims.latent * self.dims.latent
    }

    /// Bias coordinates (excluded from weight decay).
    pub(crate) fn bias_ranges(&self) -> [Range<usize>; 2] {
        [self.b1_range(), self.b2_range()]
    }

    /// Sum of squares of every non-bias coordinate.
    pub fn penalized_sq_norm(&self) -> f64 {
        let [b1, b2] = self.bias_ranges();
        self.data
            .iter()
            .enumerate()
            .filter(|(i, _)| !b1.contains(i) && !b2.contains(i))
            .map(|(_, v)| v * v)
            .sum()
    }

    /// W₁, row-major h×m.
    pub fn w1(&self) -> &[f64] {
        &self.data[self.w1_range()]
    }
    pub fn w1_mut(&mut self) -> &mut [f64] {
        let r = self.w1_range();
        &mut self.data[r]
    }
    pub fn b1(&self) -> &[f64] {
        &self.data[self.b1_range()]
    }
    pub fn b1_mut(&mut self) -> &mut [f64] {
        let r = self.b1_range();
        &mut self.data[r]
    }
    /// W₂, row-major d×h.
    pub fn w2(&self) -> &[f64] {
        &self.data[self.w2_range()]
    }
    pub fn w2_mut(&mut self) -> &mut [f64] {
        let r = self.w2_range();
        &mut self.data[r]
    }
    pub fn b2(&self) -> &[f64] {
        &self.data[self.b2_range()]
    }
    pub fn b2_mut(&mut self) -> &mut [f64] {
        let r = self.b2_range();
        &mut self.data[r]
    }

    fn arm_offset(&self, experiment: usize, arm: usize) -> usize {
        self.arm_offsets[experiment] + arm * self.dims.latent
    }

    pub fn arm(&self, experiment: usize, arm: usize) -> &[f64] {
        let o = self.arm_offset(experiment, arm);
        &self.data[o..o + self.dims.latent]
    }

    pub fn arm_mut(&mut self, experiment: usize, arm: usize) -> &mut [f64] {
        let o = self.arm_offset(experiment, arm);
        let d = self.dims.latent;
        &mut self.data[o..o + d]
    }

    /// `A_j`, row-major d×d.
    pub fn operator(&self, metric: usize) -> &[f64] {
        let d2 = self.dims.latent * self.dims.latent;
        let o = self.ops_start() + metric * d2;
        &self.data[o..o + d2]
    }

    pub fn operator_mut(&mut self, metric: usize) -> &mut [f64] {
        let d2 = self.dims.latent * self.dims.latent;
        let o = self.ops_start() + metric * d2;
        &mut self.data[o..o + d2]
    }

    pub(crate) fn check_index(&self, metric: usize, experiment: usize, arm: usize) -> Result<()> {
        if metric >= self.dims.n_metrics {
            return Err(Error::Index(format!(
                "metric {metric} (model has {})",
                self.dims.n_metrics
            )));
        }
        if experiment >= self.dims.n_experiments() {
            return Err(Error::Index(format!(
                "experiment {experiment} (model has {})",
                self.dims.n_experiments()
            )));
        }
        if arm >= self.dims.arms_per_experiment[experiment] {
            return Err(Error::Index(format!(
                "arm {arm} of experiment {experiment} (has {})",
                self.dims.arms_per_experiment[experiment]
            )));
        }
        Ok(())
    }

    pub(crate) fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.n_features {
            return Err(Error::dims("feature vector", self.dims.n_features, x.len()));
        }
        Ok(())
    }

    /// Forward pass writing hidden pre-activations, hidden outputs and v.
    pub(crate) fn forward_into(
        &self,
        x: &[f64],
        pre: &mut [f64],
        hidden: &mut [f64],
        v: &mut [f64],
    ) {
        let (m, h) = (self.dims.n_features, self.dims.hidden);
        let w1 = self.w1();
        let b1 = self.b1();
        for a in 0..h {
            let s = dot(&w1[a * m..(a + 1) * m], x) + b1[a];
            pre[a] = s;
            hidden[a] = self.activation.apply(s);
        }
        let w2 = self.w2();
        let b2 = self.b2();
        for (c, out) in v.iter_mut().enumerate() {
            *out = dot(&w2[c * h..(c + 1) * h], hidden) + b2[c];
        }
    }

    /// `v(x)`.
    pub fn embed_unit(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_features(x)?;
        let (h, d) = (self.dims.hidden, self.dims.latent);
        let mut pre = vec![0.0; h];
        let mut hid = vec![0.0; h];
        let mut v = vec![0.0; d];
        self.forward_into(x, &mut pre, &mut hid, &mut v);
        Ok(v)
    }

    /// `A_j e` for an arbitrary vector `e`.
    pub(crate) fn apply_operator(&self, metric: usize, e: &[f64], out: &mut [f64]) {
        let d = self.dims.latent;
        let a = self.operator(metric);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&a[r * d..(r + 1) * d], e);
        }
    }

    /// `vᵀ A_j eᵗ_k` for a precomputed embedding `v`.
    pub fn outcome_from_embedding(
        &self,
        v: &[f64],
        metric: usize,
        experiment: usize,
        arm: usize,
    ) -> Result<f64> {
        self.check_index(metric, experiment, arm)?;
        if v.len() != self.dims.latent {
            return Err(Error::dims("unit embedding", self.dims.latent, v.len()));
        }
        let mut u = vec![0.0; self.dims.latent];
        self.apply_operator(metric, self.arm(experiment, arm), &mut u);
        Ok(dot(v, &u))
    }

    /// Predicted potential outcome `v(x)ᵀ A_j eᵗ_k`.
    pub fn predict_outcome(
        &self,
        x: &[f64],
        metric: usize,
        experiment: usize,
        arm: usize,
    ) -> Result<f64> {
        self.check_index(metric, experiment, arm)?;
        let v = self.embed_unit(x)?;
        self.outcome_from_embedding(&v, metric, experiment, arm)
    }

    /// `v(x)ᵀ A_j (eᵗ_k − e⁰_k)`, computed as a difference of the two
    /// potential-outcome predictions.
    pub fn predict_cate(
        &self,
        x: &[f64],
        metric: usize,
        experiment: usize,
        arm: usize,
    ) -> Result<f64> {
        if arm == 0 {
            return Err(Error::InvalidArgument(
                "CATE needs a treated arm (t >= 1)".into(),
            ));
        }
        self.check_index(metric, experiment, arm)?;
        let v = self.embed_unit(x)?;
        Ok(self.outcome_from_embedding(&v, metric, experiment, arm)?
            - self.outcome_from_embedding(&v, metric, experiment, 0)?)
    }

    pub(crate) fn from_parts(dims: Dims, activation: Activation, data: Vec<f64>) -> Result<Self> {
        let mut p = LRParams::zeros(dims, activation)?;
        if data.len() != p.data.len() {
            return Err(Error::dims(
                "LRParams::from_parts",
                p.data.len(),
                data.len(),
            ));
        }
        p.data = data;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(m: usize, h: usize, d: usize) -> Dims {
        Dims {
            n_features: m,
            hidden: h,
            latent: d,
            n_metrics: 2,
            arms_per_experiment: vec![2, 3],
        }
    }

    #[test]
    fn zero_params_embed_to_zero() {
        let p = LRParams::zeros(dims(4, 3, 2), Activation::Relu).unwrap();
        assert_eq!(
            p.embed_unit(&[1.0, -2.0, 3.0, 0.5]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn identity_layers_pass_nonneg_input() {
        let mut p = LRParams::zeros(dims(3, 3, 3), Activation::Relu).unwrap();
        for i in 0..3 {
            p.w1_mut()[i * 3 + i] = 1.0;
            p.w2_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.5, 0.0, 2.0];
        assert_eq!(p.embed_unit(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_independent_oracle() {
        let mut s = RngStream::new(21);
        for act in [Activation::Relu, Activation::Identity] {
            let p = LRParams::init(dims(5, 4, 3), act, &mut s).unwrap();
            let x = s.normal_vec(5);
            // Direct two-layer evaluation from the raw blocks.
            let mut hidden = [0.0; 4];
            for (a, hv) in hidden.iter_mut().enumerate() {
                let mut acc = p.b1()[a];
                for c in 0..5 {
                    acc += p.w1()[a * 5 + c] * x[c];
                }
                *hv = if act == Activation::Relu {
                    acc.max(0.0)
                } else {
                    acc
                };
            }
            let mut expect = [0.0; 3];
            for (c, e) in expect.iter_mut().enumerate() {
                let mut acc = p.b2()[c];
                for a in 0..4 {
                    acc += p.w2()[c * 4 + a] * hidden[a];
                }
                *e = acc;
            }
            let v = p.embed_unit(&x).unwrap();
            for (a, b) in v.iter().zip(expect) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unit_basis_prediction() {
        let mut p = LRParams::zeros(dims(2, 2, 2), Activation::Identity).unwrap();
        // v(x) = x, A_0 = I, e = u₁
        p.w1_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        p.w2_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        p.operator_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        p.arm_mut(1, 2).copy_from_slice(&[1.0, 0.0]);
        assert_eq!(p.predict_outcome(&[1.0, 0.0], 0, 1, 2).unwrap(), 1.0);
        // zero arm embedding
        assert_eq!(p.predict_outcome(&[3.0, -7.0], 0, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn hand_bilinear_d3() {
        let mut p = LRParams::zeros(
            Dims {
                n_features: 3,
                hidden: 3,
                latent: 3,
                n_metrics: 1,
                arms_per_experiment: vec![2],
            },
            Activation::Identity,
        )
        .unwrap();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        p.w1_mut().copy_from_slice(&eye);
        p.w2_mut().copy_from_slice(&eye);
        p.operator_mut(0)
            .copy_from_slice(&[1.0, 2.0, 0.0, 0.0, 1.0, -1.0, 3.0, 0.0, 1.0]);
        p.arm_mut(0, 1).copy_from_slice(&[1.0, 1.0, 2.0]);
        // A e = [1+2, 1-2, 3+2] = [3, -1, 5]; v = [2, 0.5, -1] → 6 - 0.5 - 5 = 0.5
        assert_eq!(p.predict_outcome(&[2.0, 0.5, -1.0], 0, 0, 1).unwrap(), 0.5);
    }

    #[test]
    fn cate_zero_for_equal_arms() {
        let mut s = RngStream::new(2);
        let mut p = LRParams::init(dims(4, 3, 2), Activation::Relu, &mut s).unwrap();
        let e0 = p.arm(0, 0).to_vec();
        p.arm_mut(0, 1).copy_from_slice(&e0);
        for _ in 0..20 {
            let x = s.normal_vec(4);
            assert_eq!(p.predict_cate(&x, 1, 0, 1).unwrap(), 0.0);
        }
        assert!(p.predict_cate(&[0.0; 4], 0, 0, 0).is_err());
    }

    #[test]
    fn index_errors() {
        let p = LRParams::zeros(dims(2, 2, 2), Activation::Relu).unwrap();
        assert!(matches!(
            p.predict_outcome(&[0.0; 2], 2, 0, 0),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            p.predict_outcome(&[0.0; 2], 0, 2, 0),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            p.predict_outcome(&[0.0; 2], 0, 0, 2),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            p.predict_outcome(&[0.0; 3], 0, 0, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn init_follows_recipe() {
        let d = dims(400, 50, 4);
        let p = LRParams::init(d, Activation::Relu, &mut RngStream::new(0)).unwrap();
        let r1 = 1.0 / 20.0;
        assert!(p.w1().iter().all(|w| w.abs() <= r1));
        assert!(p.b1().iter().all(|&b| b == 0.0));
        assert!(p.b2().iter().all(|&b| b == 0.0));
        let a = p.operator(0);
        for i in 0..4 {
            assert!((a[i * 4 + i] - 1.0).abs() < 0.3);
        }
    }
}
