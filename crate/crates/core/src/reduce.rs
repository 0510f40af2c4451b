//! Learned non-linear dimensionality reduction trained on MDS stress.
//!
//! A small fully connected network (leaky rectifier between layers, linear
//! output) maps embeddings to a lower dimension while preserving pairwise
//! Euclidean distances. One model is trained per branch.
//!
//! Model file layout (little-endian):
//!
//! ```text
//! "PMDS" | version: u16 = 1 | activation: u8 (1 = leaky rectifier) | slope: f32
//! | layer_count: u32 | dims: [u32; layer_count + 1]
//! | per layer: weights [f32; out * in] (row-major) | biases [f32; out]
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::Embedding;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"PMDS";
pub const MODEL_VERSION: u16 = 1;
const ACTIVATION_LEAKY: u8 = 1;
pub const DEFAULT_SLOPE: f64 = 0.2;

/// Pairs per parallel gradient work item. Fixed so results do not depend on
/// the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::CorruptModel("zero-width layer".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::CorruptModel(format!(
                "layer {in_dim}->{out_dim} has {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::CorruptModel("non-finite parameter".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| dot_lanes(row, x) + b),
        );
    }
}

fn dot_lanes(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducerModel {
    layers: Vec<Layer>,
    slope: f64,
}

fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

fn leaky_grad(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Per-layer activations of one forward pass: `acts[0]` is the input,
/// `pre[l]` the pre-activation of layer `l`.
struct Trace {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ReducerModel {
    pub fn from_layers(layers: Vec<Layer>, slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::CorruptModel("no layers".into()));
        }
        if layers.windows(2).any(|w| w[0].out_dim != w[1].in_dim) {
            return Err(Error::CorruptModel("layer widths do not chain".into()));
        }
        if !slope.is_finite() {
            return Err(Error::CorruptModel("non-finite slope".into()));
        }
        Ok(Self { layers, slope })
    }

    /// Randomly initialized network with the given layer widths
    /// (`widths[0]` is the input dimension).
    pub fn new_random(widths: &[usize], slope: f64, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidTrainConfig("need at least input and output width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (i, o) = (w[0], w[1]);
                // Variance-preserving scale; hidden layers compensate for the rectifier.
                let gain = if l == last { 1.0 } else { 2.0 / (1.0 + slope * slope) };
                let bound = (3.0 * gain / i as f64).sqrt();
                let weights = (0..i * o).map(|_| rng.gen_range(-bound..bound)).collect();
                Layer::new(i, o, weights, vec![0.0; o])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, slope)
    }

    /// Single linear layer computing the identity.
    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self {
            layers: vec![Layer::new(dim, dim, w, vec![0.0; dim]).expect("valid identity layer")],
            slope: DEFAULT_SLOPE,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Raw network output (no normalization).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if l != last {
                next.iter_mut().for_each(|v| *v = leaky(*v, self.slope));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.apply(&acts[l], &mut z);
            let a = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| leaky(v, self.slope)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    /// Accumulates into `grad` the parameter gradient given `d_out`, the
    /// gradient with respect to the network output.
    fn backprop(&self, t: &Trace, d_out: &[f64], grad: &mut [f64]) {
        let offsets = self.param_offsets();
        let last = self.layers.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                for (d, &z) in delta.iter_mut().zip(&t.pre[l]) {
                    *d *= leaky_grad(z, self.slope);
                }
            }
            let input = &t.acts[l];
            let (gw, rest) = grad[offsets[l]..].split_at_mut(layer.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                rest[o] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.weights.len() + l.bias.len();
                o
            })
            .collect()
    }

    /// Forward pass followed by unit normalization. The raw output norm is
    /// kept as the result's `raw_norm`.
    pub fn reduce(&self, e: &Embedding) -> Result<Embedding> {
        if e.dim() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                actual: e.dim(),
            });
        }
        Embedding::new(self.forward(e.values()))?.normalized()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.param_count());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(ACTIVATION_LEAKY);
        out.extend_from_slice(&(self.slope as f32).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for w in self.widths() {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for l in &self.layers {
            for &v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::CorruptModel("truncated model file".into()))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MODEL_MAGIC {
            return Err(Error::CorruptModel("bad magic".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::CorruptModel(format!("unsupported version {version}")));
        }
        if take(1)?[0] != ACTIVATION_LEAKY {
            return Err(Error::CorruptModel("unknown activation".into()));
        }
        let slope = f64::from(f32::from_le_bytes(take(4)?.try_into().unwrap()));
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if count == 0 || count > 64 {
            return Err(Error::CorruptModel(format!("layer count {count}")));
        }
        let widths = (0..=count)
            .map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut read_f32s = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n.checked_mul(4).ok_or_else(|| Error::CorruptModel("size overflow".into()))?)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect())
        };
        let mut layers = Vec::with_capacity(count);
        for w in widths.windows(2) {
            let weights = read_f32s(w[0] * w[1])?;
            let bias = read_f32s(w[1])?;
            layers.push(Layer::new(w[0], w[1], weights, bias)?);
        }
        if pos != bytes.len() {
            return Err(Error::CorruptModel("trailing bytes".into()));
        }
        Self::from_layers(layers, slope)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean squared difference between input-space and output-space pair distances.
pub fn mds_loss(m: &ReducerModel, pairs: &[(&[f64], &[f64])]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|(a, b)| {
            let d_in = euclid(a, b);
            let d_out = euclid(&m.forward(a), &m.forward(b));
            (d_in - d_out).powi(2)
        })
        .sum();
    total / pairs.len() as f64
}

/// Stress and its gradient with respect to [`ReducerModel::params`].
pub fn mds_loss_and_grad(m: &ReducerModel, pairs: &[(&[f64], &[f64])]) -> (f64, Vec<f64>) {
    let n = m.param_count();
    if pairs.is_empty() {
        return (0.0, vec![0.0; n]);
    }
    let scale = 1.0 / pairs.len() as f64;
    let partial: Vec<(f64, Vec<f64>)> = pairs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            for (a, b) in chunk {
                let d_in = euclid(a, b);
                let ta = m.trace(a);
                let tb = m.trace(b);
                let fa = ta.acts.last().unwrap();
                let fb = tb.acts.last().unwrap();
                let d_out = euclid(fa, fb);
                let resid = d_in - d_out;
                loss += resid * resid;
                if d_out > 0.0 {
                    // d/dfa of (d_in - |fa - fb|)^2
                    let k = -2.0 * resid / d_out * scale;
                    let ga: Vec<f64> = fa.iter().zip(fb).map(|(x, y)| k * (x - y)).collect();
                    let gb: Vec<f64> = ga.iter().map(|g| -g).collect();
                    m.backprop(&ta, &ga, &mut grad);
                    m.backprop(&tb, &gb, &mut grad);
                }
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for (l, g) in partial {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    (loss * scale, grad)
}

/// Central-difference step for [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Maximum relative error between analytic and central-difference gradients.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// parameters with vanishing gradient from dominating through round-off.
pub fn grad_check(m: &ReducerModel, pairs: &[(&[f64], &[f64])], step: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    let (_, analytic) = mds_loss_and_grad(m, pairs);
    let base = m.params();
    let mut probe = m.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        probe.set_params(&p).unwrap();
        let up = mds_loss(&probe, pairs);
        p[i] = base[i] - step;
        probe.set_params(&p).unwrap();
        let down = mds_loss(&probe, pairs);
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSampling {
    /// Independent uniform pairs of distinct training points.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Hidden layer widths; empty for a single linear layer.
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub slope: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub pairs_per_epoch: usize,
    pub pair_sampling: PairSampling,
    /// Fraction of points held out for model selection.
    pub holdout_fraction: f64,
    /// Number of fixed held-out pairs scored after every epoch.
    pub holdout_pairs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![320],
            output_dim: 256,
            slope: DEFAULT_SLOPE,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 64,
            pairs_per_epoch: 2048,
            pair_sampling: PairSampling::UniformRandom,
            holdout_fraction: 0.2,
            holdout_pairs: 1024,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTrainConfig(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 || self.pairs_per_epoch == 0 {
            return bad("batch size and pairs per epoch must be >= 1");
        }
        if self.output_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be >= 1");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout fraction must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub best_heldout: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ReducerModel,
    /// Entry 0 is the untrained model.
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn initial_heldout(&self) -> f64 {
        self.curve[0].heldout_loss
    }

    pub fn best_heldout(&self) -> f64 {
        self.curve[self.best_epoch].heldout_loss
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

fn sample_pairs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

/// Minibatch Adam on MDS stress; returns the parameters with the lowest
/// held-out stress seen (including the untrained initialization).
///
/// With fewer than ten points nothing is held out and model selection uses
/// the training pairs.
pub fn train_reducer(data: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = data
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidTrainConfig("no training data".into()))?;
    if dim == 0 || data.iter().any(|x| x.len() != dim) {
        return Err(Error::InvalidTrainConfig("inconsistent embedding dimensions".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTrainConfig("non-finite training value".into()));
    }
    if data.iter().all(|x| x == &data[0]) {
        return Err(Error::InvalidTrainConfig("need at least two distinct embeddings".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if data.len() < 10 {
        0
    } else {
        ((data.len() as f64 * cfg.holdout_fraction).round() as usize).min(data.len() - 2)
    };
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let train: Vec<&[f64]> = train_idx.iter().map(|&i| data[i].as_slice()).collect();
    let hold: Vec<&[f64]> = if n_hold >= 2 {
        hold_idx.iter().map(|&i| data[i].as_slice()).collect()
    } else {
        train.clone()
    };
    let hold_pairs: Vec<(&[f64], &[f64])> = if hold.len() * (hold.len() - 1) / 2 <= cfg.holdout_pairs {
        (0..hold.len())
            .flat_map(|i| (i + 1..hold.len()).map(move |j| (i, j)))
            .map(|(i, j)| (hold[i], hold[j]))
            .collect()
    } else {
        sample_pairs(&mut rng, hold.len(), cfg.holdout_pairs)
            .into_iter()
            .map(|(i, j)| (hold[i], hold[j]))
            .collect()
    };

    let mut widths = vec![dim];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(cfg.output_dim);
    let mut model = ReducerModel::new_random(&widths, cfg.slope, rng.gen())?;
    let mut params = model.params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);

    let initial = mds_loss(&model, &hold_pairs);
    let mut curve = vec![EpochStats {
        epoch: 0,
        train_loss: f64::NAN,
        heldout_loss: initial,
        best_heldout: initial,
    }];
    let mut best = (initial, 0usize, params.clone());

    for epoch in 1..=cfg.epochs {
        let pairs = sample_pairs(&mut rng, train.len(), cfg.pairs_per_epoch);
        let mut epoch_loss = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let refs: Vec<(&[f64], &[f64])> = batch.iter().map(|&(i, j)| (train[i], train[j])).collect();
            let (loss, grad) = mds_loss_and_grad(&model, &refs);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut params, &grad);
            model.set_params(&params)?;
        }
        let heldout = mds_loss(&model, &hold_pairs);
        if !heldout.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if heldout < best.0 {
            best = (heldout, epoch, params.clone());
        }
        curve.push(EpochStats {
            epoch,
            train_loss: epoch_loss / pairs.len() as f64,
            heldout_loss: heldout,
            best_heldout: best.0,
        });
    }
    model.set_params(&best.2)?;
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch: best.1,
    })
}
