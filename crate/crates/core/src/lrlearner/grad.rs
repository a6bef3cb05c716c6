use std::collections::HashMap;

use crate::dataset::ObsRow;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

use super::params::LRParams;

/// Mean squared residual over `batch` plus `weight_decay · ‖θ‖²` over all
/// non-bias coordinates, and its exact gradient.
///
/// Rows of the same unit that are adjacent in `batch` share one forward and
/// backward pass through the feature network.
pub fn loss_and_grads(
    params: &LRParams,
    features: &Matrix,
    batch: &[ObsRow],
    weight_decay: f64,
) -> Result<(f64, LRParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grad = params.zeros_like();
    let mut ws = Workspace::new(params);
    let mse = ws.accumulate(params, features, batch, &mut grad)?;
    let penalty = add_weight_decay(params, weight_decay, &mut grad);
    Ok((mse + penalty, grad))
}

/// Adds `2·wd·θ` to the gradient of every non-bias coordinate and returns
/// the penalty value.
pub(crate) fn add_weight_decay(params: &LRParams, weight_decay: f64, grad: &mut LRParams) -> f64 {
    if weight_decay == 0.0 {
        return 0.0;
    }
    let [b1, b2] = params.bias_ranges();
    let mut penalty = 0.0;
    for (i, (g, &t)) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(params.as_slice())
        .enumerate()
    {
        if b1.contains(&i) || b2.contains(&i) {
            continue;
        }
        penalty += t * t;
        *g += 2.0 * weight_decay * t;
    }
    weight_decay * penalty
}

struct Slot {
    metric: usize,
    experiment: usize,
    arm: usize,
    /// A_j e
    u: Vec<f64>,
    /// Σ g·v over rows hitting this (metric, experiment, arm)
    s: Vec<f64>,
}

/// Units per register block in the first-layer passes.
const BLOCK: usize = 4;

/// Scratch buffers reused across minibatches. Per-unit quantities are
/// stored unit-major.
pub(crate) struct Workspace {
    units: Vec<usize>,
    seg: Vec<usize>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    v: Vec<f64>,
    dv: Vec<f64>,
    dz: Vec<f64>,
    slots: Vec<Slot>,
    index: HashMap<(usize, usize, usize), usize>,
}

impl Workspace {
    pub(crate) fn new(_params: &LRParams) -> Self {
        Workspace {
            units: Vec::new(),
            seg: Vec::new(),
            pre: Vec::new(),
            hidden: Vec::new(),
            v: Vec::new(),
            dv: Vec::new(),
            dz: Vec::new(),
            slots: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds the gradient of the batch mean squared residual into `grad`
    /// and returns that mean.
    pub(crate) fn accumulate(
        &mut self,
        params: &LRParams,
        features: &Matrix,
        batch: &[ObsRow],
        grad: &mut LRParams,
    ) -> Result<f64> {
        let m = params.dims().n_features;
        if features.cols() != m {
            return Err(Error::dims("feature matrix columns", m, features.cols()));
        }
        for r in batch {
            params.check_index(r.metric, r.experiment, r.arm)?;
            if r.unit_row >= features.rows() {
                return Err(Error::Index(format!(
                    "unit row {} (feature matrix has {})",
                    r.unit_row,
                    features.rows()
                )));
            }
        }
        let (h, d) = (params.dims().hidden, params.dims().latent);
        let scale = 2.0 / batch.len() as f64;

        self.units.clear();
        self.seg.clear();
        for r in batch {
            if self.units.last() != Some(&r.unit_row) {
                self.units.push(r.unit_row);
            }
            self.seg.push(self.units.len() - 1);
        }
        let nu = self.units.len();
        self.pre.resize(nu * h, 0.0);
        self.hidden.resize(nu * h, 0.0);
        self.v.resize(nu * d, 0.0);
        self.dz.resize(nu * h, 0.0);
        self.dv.clear();
        self.dv.resize(nu * d, 0.0);
        self.forward(params, features);

        self.slots.clear();
        self.index.clear();
        let mut sse = 0.0;
        for (r, &u) in batch.iter().zip(&self.seg) {
            let key = (r.metric, r.experiment, r.arm);
            let slot_idx = match self.index.get(&key) {
                Some(&i) => i,
                None => {
                    let mut u = vec![0.0; d];
                    params.apply_operator(r.metric, params.arm(r.experiment, r.arm), &mut u);
                    self.slots.push(Slot {
                        metric: r.metric,
                        experiment: r.experiment,
                        arm: r.arm,
                        u,
                        s: vec![0.0; d],
                    });
                    self.index.insert(key, self.slots.len() - 1);
                    self.slots.len() - 1
                }
            };
            let slot = &mut self.slots[slot_idx];
            let v = &self.v[u * d..(u + 1) * d];
            let resid = dot(v, &slot.u) - r.value;
            sse += resid * resid;
            let g = scale * resid;
            let dv = &mut self.dv[u * d..(u + 1) * d];
            for c in 0..d {
                slot.s[c] += g * v[c];
                dv[c] += g * slot.u[c];
            }
        }

        // ∂A_j += s eᵀ,  ∂e += A_jᵀ s
        for slot in &self.slots {
            let e = params.arm(slot.experiment, slot.arm).to_vec();
            let da = grad.operator_mut(slot.metric);
            for a in 0..d {
                let sa = slot.s[a];
                for b in 0..d {
                    da[b + a * d] += sa * e[b];
                }
            }
            let op = params.operator(slot.metric);
            let de = grad.arm_mut(slot.experiment, slot.arm);
            for a in 0..d {
                let sa = slot.s[a];
                for b in 0..d {
                    de[b] += op[a * d + b] * sa;
                }
            }
        }
        self.backward(params, features, grad);
        Ok(sse / batch.len() as f64)
    }

    fn forward(&mut self, params: &LRParams, features: &Matrix) {
        let (m, h, d) = (
            params.dims().n_features,
            params.dims().hidden,
            params.dims().latent,
        );
        let act = params.activation();
        let (w1, b1) = (params.w1(), params.b1());
        for (bi, block) in self.units.chunks(BLOCK).enumerate() {
            let base = bi * BLOCK;
            if let [u0, u1, u2, u3] = *block {
                let xs = [
                    features.row(u0),
                    features.row(u1),
                    features.row(u2),
                    features.row(u3),
                ];
                for a in 0..h {
                    let s = dot4(&w1[a * m..(a + 1) * m], xs);
                    for (k, sk) in s.into_iter().enumerate() {
                        self.pre[(base + k) * h + a] = sk + b1[a];
                    }
                }
            } else {
                for (k, &u) in block.iter().enumerate() {
                    let x = features.row(u);
                    for a in 0..h {
                        self.pre[(base + k) * h + a] = dot(&w1[a * m..(a + 1) * m], x) + b1[a];
                    }
                }
            }
        }
        for (z, &p) in self.hidden.iter_mut().zip(&self.pre) {
            *z = act.apply(p);
        }
        let (w2, b2) = (params.w2(), params.b2());
        for u in 0..self.units.len() {
            let z = &self.hidden[u * h..(u + 1) * h];
            for c in 0..d {
                self.v[u * d + c] = dot(&w2[c * h..(c + 1) * h], z) + b2[c];
            }
        }
    }

    /// Chains the accumulated `∂/∂v` of every unit through the network.
    fn backward(&mut self, params: &LRParams, features: &Matrix, grad: &mut LRParams) {
        let (m, h, d) = (
            params.dims().n_features,
            params.dims().hidden,
            params.dims().latent,
        );
        let act = params.activation();
        let w2 = params.w2();
        self.dz.iter_mut().for_each(|z| *z = 0.0);
        for u in 0..self.units.len() {
            let dv = &self.dv[u * d..(u + 1) * d];
            let z = &self.hidden[u * h..(u + 1) * h];
            let dz = &mut self.dz[u * h..(u + 1) * h];
            let gw2 = grad.w2_mut();
            for (c, &dvc) in dv.iter().enumerate() {
                if dvc == 0.0 {
                    continue;
                }
                let row = &mut gw2[c * h..(c + 1) * h];
                let wrow = &w2[c * h..(c + 1) * h];
                for a in 0..h {
                    row[a] += dvc * z[a];
                    dz[a] += wrow[a] * dvc;
                }
            }
            for (b, &dvc) in grad.b2_mut().iter_mut().zip(dv) {
                *b += dvc;
            }
            let pre = &self.pre[u * h..(u + 1) * h];
            for (g, &p) in dz.iter_mut().zip(pre) {
                *g *= act.slope(p);
            }
            for (b, &g) in grad.b1_mut().iter_mut().zip(dz.iter()) {
                *b += g;
            }
        }
        let gw1 = grad.w1_mut();
        for (bi, block) in self.units.chunks(BLOCK).enumerate() {
            let base = bi * BLOCK;
            if let [u0, u1, u2, u3] = *block {
                let xs = [
                    features.row(u0),
                    features.row(u1),
                    features.row(u2),
                    features.row(u3),
                ];
                for a in 0..h {
                    let c = [
                        self.dz[base * h + a],
                        self.dz[(base + 1) * h + a],
                        self.dz[(base + 2) * h + a],
                        self.dz[(base + 3) * h + a],
                    ];
                    if c == [0.0; 4] {
                        continue;
                    }
                    axpy4(&mut gw1[a * m..(a + 1) * m], c, xs);
                }
            } else {
                for (k, &u) in block.iter().enumerate() {
                    let x = features.row(u);
                    for a in 0..h {
                        let c = self.dz[(base + k) * h + a];
                        if c == 0.0 {
                            continue;
                        }
                        for (w, &xi) in gw1[a * m..(a + 1) * m].iter_mut().zip(x) {
                            *w += c * xi;
                        }
                    }
                }
            }
        }
    }
}

/// Four dot products of `w` against four vectors at once.
#[inline]
fn dot4(w: &[f64], xs: [&[f64]; 4]) -> [f64; 4] {
    let n = w.len();
    let [x0, x1, x2, x3] = xs.map(|x| &x[..n]);
    let mut acc = [[0.0f64; 4]; 4];
    let lanes = w
        .chunks_exact(4)
        .zip(x0.chunks_exact(4))
        .zip(x1.chunks_exact(4))
        .zip(x2.chunks_exact(4))
        .zip(x3.chunks_exact(4));
    for ((((wv, a), b), c), e) in lanes {
        for l in 0..4 {
            acc[0][l] += wv[l] * a[l];
            acc[1][l] += wv[l] * b[l];
            acc[2][l] += wv[l] * c[l];
            acc[3][l] += wv[l] * e[l];
        }
    }
    let full = n - n % 4;
    let mut out = [0.0; 4];
    for (k, x) in [x0, x1, x2, x3].into_iter().enumerate() {
        let tail: f64 = w[full..].iter().zip(&x[full..]).map(|(p, q)| p * q).sum();
        out[k] = (acc[k][0] + acc[k][2]) + (acc[k][1] + acc[k][3]) + tail;
    }
    out
}

/// `row += Σ_k c_k · x_k`
#[inline]
fn axpy4(row: &mut [f64], c: [f64; 4], xs: [&[f64]; 4]) {
    let n = row.len();
    let [x0, x1, x2, x3] = xs.map(|x| &x[..n]);
    for ((((r, a), b), p), q) in row.iter_mut().zip(x0).zip(x1).zip(x2).zip(x3) {
        *r += (c[0] * a + c[1] * b) + (c[2] * p + c[3] * q);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrlearner::params::{Activation, Dims};
    use crate::numerics::RngStream;

    fn dims(m: usize, h: usize, d: usize) -> Dims {
        Dims {
            n_features: m,
            hidden: h,
            latent: d,
            n_metrics: 2,
            arms_per_experiment: vec![2, 3],
        }
    }

    /// Plain per-row loss with no shared computation.
    fn naive_loss(p: &LRParams, x: &Matrix, batch: &[ObsRow], wd: f64) -> f64 {
        let mut sse = 0.0;
        for r in batch {
            let y = p
                .predict_outcome(x.row(r.unit_row), r.metric, r.experiment, r.arm)
                .unwrap();
            sse += (y - r.value).powi(2);
        }
        sse / batch.len() as f64 + wd * p.penalized_sq_norm()
    }

    fn random_instance(s: &mut RngStream, act: Activation) -> (LRParams, Matrix, Vec<ObsRow>) {
        let p = LRParams::init(dims(5, 6, 4), act, s).unwrap();
        let n = 4;
        let x = Matrix::from_vec(n, 5, s.normal_vec(n * 5)).unwrap();
        let mut batch = Vec::new();
        for _ in 0..7 {
            let experiment = s.below(2) as usize;
            let arm = s.below(if experiment == 0 { 2 } else { 3 }) as usize;
            batch.push(ObsRow {
                unit_row: s.below(n as u64) as usize,
                experiment,
                arm,
                metric: s.below(2) as usize,
                value: s.std_normal(),
            });
        }
        (p, x, batch)
    }

    #[test]
    fn finite_difference_oracle() {
        let mut s = RngStream::new(1234);
        let step = 1e-5;
        for inst in 0..100 {
            let act = if inst % 2 == 0 {
                Activation::Relu
            } else {
                Activation::Identity
            };
            let (p, x, batch) = random_instance(&mut s, act);
            let wd = if inst % 3 == 0 { 0.0 } else { 0.01 };
            let (loss, g) = loss_and_grads(&p, &x, &batch, wd).unwrap();
            assert!((loss - naive_loss(&p, &x, &batch, wd)).abs() <= 1e-12 * (1.0 + loss));
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus.as_mut_slice()[i] += step;
                let mut minus = p.clone();
                minus.as_mut_slice()[i] -= step;
                let fd = (naive_loss(&plus, &x, &batch, wd) - naive_loss(&minus, &x, &batch, wd))
                    / (2.0 * step);
                let an = g.as_slice()[i];
                let err = (fd - an).abs();
                assert!(
                    err <= 1e-8 || err <= 1e-4 * fd.abs().max(an.abs()),
                    "instance {inst} coord {i}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn hand_chain_rule_d2() {
        // m = h = d = 2, linear network, W₁ = I, W₂ = [[1,2],[0,1]], b = 0
        let mut p = LRParams::zeros(
            Dims {
                n_features: 2,
                hidden: 2,
                latent: 2,
                n_metrics: 1,
                arms_per_experiment: vec![2],
            },
            Activation::Identity,
        )
        .unwrap();
        p.w1_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        p.w2_mut().copy_from_slice(&[1.0, 2.0, 0.0, 1.0]);
        p.operator_mut(0).copy_from_slice(&[2.0, 0.0, 1.0, 1.0]);
        p.arm_mut(0, 1).copy_from_slice(&[1.0, -1.0]);
        let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let batch = [ObsRow {
            unit_row: 0,
            experiment: 0,
            arm: 1,
            metric: 0,
            value: 1.0,
        }];
        // z = x = [1,1]; v = W₂z = [3,1]; A e = [2, 0]; ŷ = 6; r = 5; g = 10
        let (loss, g) = loss_and_grads(&p, &x, &batch, 0.0).unwrap();
        assert_eq!(loss, 25.0);
        // ∂A = g v eᵀ = 10·[[3,-3],[1,-1]]
        assert_eq!(g.operator(0), &[30.0, -30.0, 10.0, -10.0]);
        // ∂e = g Aᵀ v = 10·[2·3+1·1, 0·3+1·1] = [70, 10]
        assert_eq!(g.arm(0, 1), &[70.0, 10.0]);
        assert_eq!(g.arm(0, 0), &[0.0, 0.0]);
        // ∂v = g A e = [20, 0]; ∂W₂ = ∂v zᵀ; ∂b₂ = ∂v
        assert_eq!(g.w2(), &[20.0, 20.0, 0.0, 0.0]);
        assert_eq!(g.b2(), &[20.0, 0.0]);
        // ∂z = W₂ᵀ ∂v = [20, 40]; ∂W₁ = ∂z xᵀ; ∂b₁ = ∂z
        assert_eq!(g.w1(), &[20.0, 20.0, 40.0, 40.0]);
        assert_eq!(g.b1(), &[20.0, 40.0]);
    }

    #[test]
    fn exact_fit_gives_zero() {
        let mut s = RngStream::new(8);
        let (p, x, mut batch) = random_instance(&mut s, Activation::Relu);
        for r in &mut batch {
            r.value = p
                .predict_outcome(x.row(r.unit_row), r.metric, r.experiment, r.arm)
                .unwrap();
        }
        let (loss, g) = loss_and_grads(&p, &x, &batch, 0.0).unwrap();
        assert!(loss <= 1e-28);
        assert!(g.as_slice().iter().all(|v| v.abs() <= 1e-13));
    }

    #[test]
    fn weight_decay_spares_biases() {
        let mut p = LRParams::zeros(dims(2, 2, 2), Activation::Relu).unwrap();
        p.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        let mut g = p.zeros_like();
        let pen = add_weight_decay(&p, 0.5, &mut g);
        let n_bias = 2 + 2;
        assert_eq!(pen, 0.5 * (p.len() - n_bias) as f64);
        assert!(g.b1().iter().chain(g.b2()).all(|&v| v == 0.0));
        assert!(g.w1().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bad_indices_rejected() {
        let p = LRParams::zeros(dims(2, 2, 2), Activation::Relu).unwrap();
        let x = Matrix::zeros(1, 2);
        let bad = [ObsRow {
            unit_row: 0,
            experiment: 0,
            arm: 2,
            metric: 0,
            value: 0.0,
        }];
        assert!(matches!(
            loss_and_grads(&p, &x, &bad, 0.0),
            Err(Error::Index(_))
        ));
        let bad = [ObsRow {
            unit_row: 1,
            experiment: 0,
            arm: 0,
            metric: 0,
            value: 0.0,
        }];
        assert!(matches!(
            loss_and_grads(&p, &x, &bad, 0.0),
            Err(Error::Index(_))
        ));
        assert!(loss_and_grads(&p, &x, &[], 0.0).is_err());
    }
}
