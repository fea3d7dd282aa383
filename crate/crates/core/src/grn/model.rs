use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GrnError;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrnHyperparams {
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub dropout: f64,
    pub lr: f64,
}

impl GrnHyperparams {
    /// The tuned shape used for the reference experiments.
    pub fn tuned() -> Self {
        Self {
            hidden_dim: 192,
            num_blocks: 2,
            dropout: 0.1298,
            lr: 0.00828,
        }
    }

    /// Structural sanity only; the tuning ranges live in the search space.
    pub fn validate(&self) -> Result<(), GrnError> {
        let bad = |m: &str| Err(GrnError::InvalidHyperparams(m.into()));
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(h: usize) -> Self {
        Self {
            gamma: Array1::ones(h),
            beta: Array1::zeros(h),
            running_mean: Array1::zeros(h),
            running_var: Array1::ones(h),
        }
    }

    fn train(&self, z: &Array2<f64>) -> (Array2<f64>, BnCache) {
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let var = z.var_axis(Axis(0), 0.0);
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (z - &mean) * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (
            y,
            BnCache {
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    fn infer(&self, z: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        (z - &self.running_mean) * &inv_std * &self.gamma + &self.beta
    }

    /// Returns (dz, dγ, dβ).
    fn backward(&self, c: &BnCache, dy: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let n = dy.nrows() as f64;
        let dgamma = (dy * &c.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let s1 = dxhat.sum_axis(Axis(0));
        let s2 = (&dxhat * &c.xhat).sum_axis(Axis(0));
        let dz = (dxhat * n - &s1 - &c.xhat * &s2) * &(&c.inv_std / n);
        (dz, dgamma, dbeta)
    }

    fn update_running(&mut self, c: &BnCache, n: usize) {
        let unbiased = n as f64 / (n as f64 - 1.0);
        self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &c.mean * BN_MOMENTUM;
        self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + &c.var * (BN_MOMENTUM * unbiased);
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

/// Gated residual block: `h' = BN(h + Dropout(GLU(h)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub w_value: Array2<f64>,
    pub b_value: Array1<f64>,
    pub w_gate: Array2<f64>,
    pub b_gate: Array1<f64>,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrnParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub bn_in: BatchNorm,
    pub blocks: Vec<Block>,
    pub w_out: Array1<f64>,
    pub b_out: Array1<f64>,
    /// Bumped by every optimizer step so stale caches are detected.
    #[serde(skip)]
    pub(crate) generation: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub w_value: Array2<f64>,
    pub b_value: Array1<f64>,
    pub w_gate: Array2<f64>,
    pub b_gate: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrnGrads {
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub gamma_in: Array1<f64>,
    pub beta_in: Array1<f64>,
    pub blocks: Vec<BlockGrads>,
    pub w_out: Array1<f64>,
    pub b_out: Array1<f64>,
}

impl GrnGrads {
    /// Tensors in the same order as [`GrnParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out = vec![s2(&self.w_in), s1(&self.b_in), s1(&self.gamma_in), s1(&self.beta_in)];
        for b in &self.blocks {
            out.extend([
                s2(&b.w_value),
                s1(&b.b_value),
                s2(&b.w_gate),
                s1(&b.b_gate),
                s1(&b.gamma),
                s1(&b.beta),
            ]);
        }
        out.extend([s1(&self.w_out), s1(&self.b_out)]);
        out
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    h: Array2<f64>,
    a: Array2<f64>,
    sig: Array2<f64>,
    mask: Option<Array2<f64>>,
    bn: BnCache,
}

/// Intermediates of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    x: Array2<f64>,
    bn_in: BnCache,
    /// Input-layer batch-norm output, before the ReLU.
    pre_relu: Array2<f64>,
    blocks: Vec<BlockCache>,
    h_last: Array2<f64>,
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Matrix products of transposed views can come back column-major.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn uniform1(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.random_range(-bound..bound))
}

fn uniform2(rng: &mut ChaCha8Rng, r: usize, c: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-bound..bound))
}

impl GrnParams {
    /// Fan-in scaled uniform weights and biases, `U(±1/√fan_in)`.
    pub fn init(hp: &GrnHyperparams, input_dim: usize, seed: u64) -> Result<Self, GrnError> {
        hp.validate()?;
        if input_dim == 0 {
            return Err(GrnError::InvalidHyperparams("input_dim must be positive".into()));
        }
        let h = hp.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bi = 1.0 / (input_dim as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        let w_in = uniform2(&mut rng, input_dim, h, bi);
        let b_in = uniform1(&mut rng, h, bi);
        let blocks = (0..hp.num_blocks)
            .map(|_| Block {
                w_value: uniform2(&mut rng, h, h, bh),
                b_value: uniform1(&mut rng, h, bh),
                w_gate: uniform2(&mut rng, h, h, bh),
                b_gate: uniform1(&mut rng, h, bh),
                bn: BatchNorm::new(h),
            })
            .collect();
        let w_out = uniform1(&mut rng, h, bh);
        let b_out = uniform1(&mut rng, 1, bh);
        Ok(Self {
            input_dim,
            hidden_dim: h,
            dropout: hp.dropout,
            w_in,
            b_in,
            bn_in: BatchNorm::new(h),
            blocks,
            w_out,
            b_out,
            generation: 0,
        })
    }

    /// Trainable tensors with their weight-decay flag. Biases and batch-norm
    /// affine parameters are not decayed.
    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = vec![
            (s2(&mut self.w_in), true),
            (s1(&mut self.b_in), false),
            (s1(&mut self.bn_in.gamma), false),
            (s1(&mut self.bn_in.beta), false),
        ];
        for b in &mut self.blocks {
            out.push((s2(&mut b.w_value), true));
            out.push((s1(&mut b.b_value), false));
            out.push((s2(&mut b.w_gate), true));
            out.push((s1(&mut b.b_gate), false));
            out.push((s1(&mut b.bn.gamma), false));
            out.push((s1(&mut b.bn.beta), false));
        }
        out.push((s1(&mut self.w_out), true));
        out.push((s1(&mut self.b_out), false));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut p = self.clone();
        p.tensors_mut().iter().map(|(t, _)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        let mut p = self.clone();
        let finite = p.tensors_mut().iter().all(|(t, _)| t.iter().all(|v| v.is_finite()));
        let stats = std::iter::once(&self.bn_in)
            .chain(self.blocks.iter().map(|b| &b.bn))
            .all(|bn| bn.running_mean.iter().chain(&bn.running_var).all(|v| v.is_finite()));
        finite && stats
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), GrnError> {
        if x.ncols() != self.input_dim {
            return Err(GrnError::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Inference: running statistics, no dropout, no state change.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>, GrnError> {
        self.check_input(&x)?;
        let z = x.dot(&self.w_in) + &self.b_in;
        let mut h = self.bn_in.infer(&z).mapv(|v| v.max(0.0));
        for b in &self.blocks {
            let a = h.dot(&b.w_value) + &b.b_value;
            let s = h.dot(&b.w_gate) + &b.b_gate;
            let g = a * s.mapv(sigmoid);
            h = b.bn.infer(&(h + g));
        }
        Ok(h.dot(&self.w_out) + self.b_out[0])
    }

    /// Training-mode forward: batch statistics and inverted dropout drawn from `seed`.
    pub fn forward_train(&self, x: ArrayView2<f64>, seed: u64) -> Result<(Array1<f64>, ForwardCache), GrnError> {
        self.check_input(&x)?;
        if x.nrows() < 2 {
            return Err(GrnError::BatchTooSmall { got: x.nrows() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 - self.dropout;
        let z = x.dot(&self.w_in) + &self.b_in;
        let (pre_relu, bn_in) = self.bn_in.train(&z);
        let mut h = pre_relu.mapv(|v| v.max(0.0));
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let a = h.dot(&b.w_value) + &b.b_value;
            let sig = (h.dot(&b.w_gate) + &b.b_gate).mapv(sigmoid);
            let mut g = &a * &sig;
            let mask = (self.dropout > 0.0).then(|| {
                Array2::from_shape_fn(
                    g.raw_dim(),
                    |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    },
                )
            });
            if let Some(m) = &mask {
                g *= m;
            }
            let (out, bn) = b.bn.train(&(&h + &g));
            caches.push(BlockCache { h, a, sig, mask, bn });
            h = out;
        }
        let pred = h.dot(&self.w_out) + self.b_out[0];
        Ok((
            pred,
            ForwardCache {
                generation: self.generation,
                x: x.to_owned(),
                bn_in,
                pre_relu,
                blocks: caches,
                h_last: h,
            },
        ))
    }

    /// Fold the batch statistics of a train-mode pass into the running stats.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let n = cache.x.nrows();
        self.bn_in.update_running(&cache.bn_in, n);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.bn.update_running(&c.bn, n);
        }
    }

    /// Reverse pass for `dL/dpred`.
    pub fn backward(&self, cache: &ForwardCache, dpred: &Array1<f64>) -> Result<GrnGrads, GrnError> {
        if cache.generation != self.generation || cache.blocks.len() != self.blocks.len() {
            return Err(GrnError::StaleCache);
        }
        if dpred.len() != cache.x.nrows() {
            return Err(GrnError::ShapeMismatch(format!(
                "loss gradient has {} entries for a batch of {}",
                dpred.len(),
                cache.x.nrows()
            )));
        }
        let w_out = cache.h_last.t().dot(dpred);
        let b_out = Array1::from_elem(1, dpred.sum());
        let mut dh = dpred
            .view()
            .insert_axis(Axis(1))
            .dot(&self.w_out.view().insert_axis(Axis(0)));

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (du, gamma, beta) = b.bn.backward(&c.bn, &dh);
            let mut dg = du.clone();
            if let Some(m) = &c.mask {
                dg *= m;
            }
            let da = &dg * &c.sig;
            let ds = &dg * &c.a * &c.sig * &c.sig.mapv(|s| 1.0 - s);
            dh = du + da.dot(&b.w_value.t()) + ds.dot(&b.w_gate.t());
            blocks.push(BlockGrads {
                w_value: standard(c.h.t().dot(&da)),
                b_value: da.sum_axis(Axis(0)),
                w_gate: standard(c.h.t().dot(&ds)),
                b_gate: ds.sum_axis(Axis(0)),
                gamma,
                beta,
            });
        }
        blocks.reverse();

        let dy = dh * &cache.pre_relu.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let (dz, gamma_in, beta_in) = self.bn_in.backward(&cache.bn_in, &dy);
        Ok(GrnGrads {
            w_in: standard(cache.x.t().dot(&dz)),
            b_in: dz.sum_axis(Axis(0)),
            gamma_in,
            beta_in,
            blocks,
            w_out,
            b_out,
        })
    }
}

/// Mean absolute error and its gradient with respect to the predictions,
/// using `sign(0) = 0`.
pub fn mae_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "prediction/target length");
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, y)| (y - p).abs()).sum::<f64>() / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, y)| {
            let d = p - y;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    (loss, grad)
}
