//! Small fixed-weight classifier standing in for a frozen backbone.
//!
//! Architecture: conv 3→8 (k3, s2, p1), ReLU, conv 8→16 (k3, s2, p1), ReLU,
//! global average pool, dropout (training only), linear 16→K.
//!
//! Convolutions run as im2col followed by row-wise axpy products so the inner
//! loops are contiguous. Only [`pretrain`] computes weight gradients; a loaded
//! [`FrozenModel`] exposes nothing but forward logits and input gradients.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::rng::RngStream;
use crate::tensorfile::{find, TensorEntry};

pub const C1: usize = 8;
pub const C2: usize = 16;
pub const FEATURES: usize = C2;
const K: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;
/// Smallest accepted input side.
pub const MIN_SIDE: usize = 8;

fn out_side(n: usize) -> usize {
    (n + 2 * PAD - K) / STRIDE + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub conv1_w: Vec<f32>,
    pub conv1_b: Vec<f32>,
    pub conv2_w: Vec<f32>,
    pub conv2_b: Vec<f32>,
    pub fc_w: Vec<f32>,
    pub fc_b: Vec<f32>,
}

impl ModelWeights {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            conv1_w: vec![0.0; C1 * CHANNELS * K * K],
            conv1_b: vec![0.0; C1],
            conv2_w: vec![0.0; C2 * C1 * K * K],
            conv2_b: vec![0.0; C2],
            fc_w: vec![0.0; num_classes * FEATURES],
            fc_b: vec![0.0; num_classes],
        }
    }

    /// He-normal initialisation for the convolutions, small normal head.
    pub fn random(num_classes: usize, rng: RngStream) -> Self {
        let mut r = rng.rng();
        let mut w = Self::zeros(num_classes);
        let he = |fan_in: usize| Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("valid std");
        let d1 = he(CHANNELS * K * K);
        w.conv1_w.iter_mut().for_each(|v| *v = d1.sample(&mut r));
        let d2 = he(C1 * K * K);
        w.conv2_w.iter_mut().for_each(|v| *v = d2.sample(&mut r));
        let d3 = Normal::new(0.0f32, (1.0 / FEATURES as f32).sqrt()).expect("valid std");
        w.fc_w.iter_mut().for_each(|v| *v = d3.sample(&mut r));
        w
    }

    fn num_classes(&self) -> usize {
        self.fc_b.len()
    }

    fn groups(&self) -> [&Vec<f32>; 6] {
        [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.fc_w, &self.fc_b]
    }

    fn groups_mut(&mut self) -> [&mut Vec<f32>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let expect = Self::zeros(k);
        for (a, b) in self.groups().iter().zip(expect.groups()) {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch(format!(
                    "weight tensor has {} values, architecture needs {}",
                    a.len(),
                    b.len()
                )));
            }
        }
        if k < 1 {
            return Err(Error::DimensionMismatch("model needs at least one class".into()));
        }
        if self.groups().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteInput("model weights"));
        }
        Ok(())
    }
}

/// A classifier whose weights cannot change after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    weights: ModelWeights,
}

impl FrozenModel {
    pub fn new(weights: ModelWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.num_classes()
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    /// FNV-1a over the bit patterns of every weight, in file order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for g in self.weights.groups() {
            for v in g.iter() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn to_entries(&self) -> Vec<TensorEntry> {
        let w = &self.weights;
        let k = self.num_classes();
        vec![
            TensorEntry::new("conv1.w", vec![C1, CHANNELS, K, K], w.conv1_w.clone()),
            TensorEntry::new("conv1.b", vec![C1], w.conv1_b.clone()),
            TensorEntry::new("conv2.w", vec![C2, C1, K, K], w.conv2_w.clone()),
            TensorEntry::new("conv2.b", vec![C2], w.conv2_b.clone()),
            TensorEntry::new("fc.w", vec![k, FEATURES], w.fc_w.clone()),
            TensorEntry::new("fc.b", vec![k], w.fc_b.clone()),
            TensorEntry::scalar("meta.num_classes", k as f32),
        ]
    }

    pub fn from_entries(entries: &[TensorEntry]) -> Result<Self> {
        let k = find(entries, "meta.num_classes", Some(1))?.data[0];
        if !(k >= 1.0 && k.fract() == 0.0) {
            return Err(Error::DimensionMismatch(format!("meta.num_classes = {k}")));
        }
        let k = k as usize;
        let get = |name: &str, n: usize| find(entries, name, Some(n)).map(|e| e.data.clone());
        Self::new(ModelWeights {
            conv1_w: get("conv1.w", C1 * CHANNELS * K * K)?,
            conv1_b: get("conv1.b", C1)?,
            conv2_w: get("conv2.w", C2 * C1 * K * K)?,
            conv2_b: get("conv2.b", C2)?,
            fc_w: get("fc.w", k * FEATURES)?,
            fc_b: get("fc.b", k)?,
        })
    }
}

/// im2col for a 3×3, stride-2, pad-1 convolution. Row `(c, ky, kx)` holds the
/// input value feeding each output position.
fn im2col(input: &[f32], ch: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (out_side(h), out_side(w));
    let np = oh * ow;
    let mut col = vec![0.0f32; ch * K * K * np];
    for c in 0..ch {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut col[((c * K + ky) * K + kx) * np..][..np];
                for oy in 0..oh {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (col, oh, ow)
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(col: &[f32], ch: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (out_side(h), out_side(w));
    let np = oh * ow;
    let mut out = vec![0.0f32; ch * h * w];
    for c in 0..ch {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..K {
            for kx in 0..K {
                let row = &col[((c * K + ky) * K + kx) * np..][..np];
                for oy in 0..oh {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * ow..][..ow];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[o, p] = b[o] + Σ_k w[o, k] · col[k, p]`
fn conv_gemm(wt: &[f32], b: &[f32], col: &[f32], rows: usize, np: usize) -> Vec<f32> {
    let oc = b.len();
    let mut out = vec![0.0f32; oc * np];
    for o in 0..oc {
        let dst = &mut out[o * np..(o + 1) * np];
        dst.fill(b[o]);
        for k in 0..rows {
            let wv = wt[o * rows + k];
            if wv == 0.0 {
                continue;
            }
            let src = &col[k * np..(k + 1) * np];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
    out
}

/// `gcol[k, p] = Σ_o w[o, k] · g[o, p]`
fn conv_gemm_t(wt: &[f32], g: &[f32], oc: usize, rows: usize, np: usize) -> Vec<f32> {
    let mut gcol = vec![0.0f32; rows * np];
    for o in 0..oc {
        let src = &g[o * np..(o + 1) * np];
        if src.iter().all(|&v| v == 0.0) {
            continue;
        }
        for k in 0..rows {
            let wv = wt[o * rows + k];
            let dst = &mut gcol[k * np..(k + 1) * np];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
    gcol
}

/// Cached activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ModelTape {
    height: usize,
    width: usize,
    z1: Vec<f32>,
    col2: Vec<f32>,
    z2: Vec<f32>,
    features: Vec<f32>,
    /// Per-feature multiplier applied by dropout (1.0 when inactive).
    dropout: Vec<f32>,
    col1: Option<Vec<f32>>,
    side1: (usize, usize),
    side2: (usize, usize),
}

impl ModelTape {
    /// Pooled features after dropout, as fed to the linear head.
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// Pre-activations of the first convolution.
    pub fn conv1_preactivations(&self) -> &[f32] {
        &self.z1
    }

    pub fn conv2_preactivations(&self) -> &[f32] {
        &self.z2
    }
}

/// Dropout on pooled features.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f32,
    pub rng: RngStream,
}

/// Inverted dropout on a feature vector: in training each entry is kept with
/// probability `1 - rate` and rescaled by `1/(1 - rate)`; in eval mode, and
/// for `rate == 0`, the input is returned unchanged.
pub fn dropout_feature(features: &[f32], rate: f32, rng: RngStream, training: bool) -> Result<Vec<f32>> {
    Ok(dropout_multipliers(features.len(), rate, rng, training)?
        .iter()
        .zip(features)
        .map(|(m, f)| m * f)
        .collect())
}

fn dropout_multipliers(n: usize, rate: f32, rng: RngStream, training: bool) -> Result<Vec<f32>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let keep = 1.0 / (1.0 - rate);
    let mut r = rng.rng();
    Ok((0..n)
        .map(|_| if r.random::<f32>() < rate { 0.0 } else { keep })
        .collect())
}

fn forward_impl(
    x: &Image,
    w: &ModelWeights,
    dropout: Option<Dropout>,
    keep_col1: bool,
) -> Result<(Vec<f32>, ModelTape)> {
    let (h, wd) = (x.height(), x.width());
    if h < MIN_SIDE || wd < MIN_SIDE {
        return Err(Error::shape(format!("at least {MIN_SIDE}x{MIN_SIDE} input"), x.shape_string()));
    }
    let (col1, h1, w1) = im2col(x.data(), CHANNELS, h, wd);
    let np1 = h1 * w1;
    let z1 = conv_gemm(&w.conv1_w, &w.conv1_b, &col1, CHANNELS * K * K, np1);
    let a1: Vec<f32> = z1.iter().map(|&v| v.max(0.0)).collect();
    let (col2, h2, w2) = im2col(&a1, C1, h1, w1);
    let np2 = h2 * w2;
    let z2 = conv_gemm(&w.conv2_w, &w.conv2_b, &col2, C1 * K * K, np2);
    let pooled: Vec<f32> = (0..C2)
        .map(|o| {
            let s: f64 = z2[o * np2..(o + 1) * np2].iter().map(|&v| v.max(0.0) as f64).sum();
            (s / np2 as f64) as f32
        })
        .collect();
    let mult = match dropout {
        Some(d) => dropout_multipliers(FEATURES, d.rate, d.rng, true)?,
        None => vec![1.0; FEATURES],
    };
    let features: Vec<f32> = pooled.iter().zip(&mult).map(|(p, m)| p * m).collect();
    let k = w.num_classes();
    let logits: Vec<f32> = (0..k)
        .map(|c| {
            let row = &w.fc_w[c * FEATURES..(c + 1) * FEATURES];
            let s: f64 = row.iter().zip(&features).map(|(&a, &b)| a as f64 * b as f64).sum();
            (s + w.fc_b[c] as f64) as f32
        })
        .collect();
    Ok((
        logits,
        ModelTape {
            height: h,
            width: wd,
            z1,
            col2,
            z2,
            features,
            dropout: mult,
            col1: keep_col1.then_some(col1),
            side1: (h1, w1),
            side2: (h2, w2),
        },
    ))
}

pub fn model_forward(x: &Image, m: &FrozenModel) -> Result<(Vec<f32>, ModelTape)> {
    forward_impl(x, &m.weights, None, false)
}

/// Forward pass with optional feature dropout (training mode).
pub fn model_forward_train(x: &Image, m: &FrozenModel, dropout: Option<Dropout>) -> Result<(Vec<f32>, ModelTape)> {
    forward_impl(x, &m.weights, dropout, false)
}

struct Backprop {
    gz1: Vec<f32>,
    gz2: Vec<f32>,
    gfeat: Vec<f32>,
}

fn backprop_to_z1(tape: &ModelTape, grad_logits: &[f32], w: &ModelWeights) -> Result<Backprop> {
    let k = w.num_classes();
    if grad_logits.len() != k {
        return Err(Error::TapeMismatch(format!("{} logit gradients for {k} classes", grad_logits.len())));
    }
    let mut gfeat = vec![0.0f32; FEATURES];
    for c in 0..k {
        let g = grad_logits[c];
        for (f, &wv) in gfeat.iter_mut().zip(&w.fc_w[c * FEATURES..(c + 1) * FEATURES]) {
            *f += g * wv;
        }
    }
    let np2 = tape.side2.0 * tape.side2.1;
    let mut gz2 = vec![0.0f32; C2 * np2];
    for o in 0..C2 {
        let g = gfeat[o] * tape.dropout[o] / np2 as f32;
        for p in 0..np2 {
            if tape.z2[o * np2 + p] > 0.0 {
                gz2[o * np2 + p] = g;
            }
        }
    }
    let (h1, w1) = tape.side1;
    let gcol2 = conv_gemm_t(&w.conv2_w, &gz2, C2, C1 * K * K, np2);
    let mut gz1 = col2im(&gcol2, C1, h1, w1);
    for (g, &z) in gz1.iter_mut().zip(&tape.z1) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(Backprop { gz1, gz2, gfeat })
}

/// Exact `∂loss/∂x` given `∂loss/∂logits`. No weight gradients are formed.
pub fn model_input_grad(tape: &ModelTape, grad_logits: &[f32], m: &FrozenModel) -> Result<Image> {
    let w = &m.weights;
    let bp = backprop_to_z1(tape, grad_logits, w)?;
    let np1 = tape.side1.0 * tape.side1.1;
    let gcol1 = conv_gemm_t(&w.conv1_w, &bp.gz1, C1, CHANNELS * K * K, np1);
    Ok(Image::from_parts(tape.height, tape.width, col2im(&gcol1, CHANNELS, tape.height, tape.width)))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy via log-sum-exp, with its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f32], label: usize) -> Result<(f64, Vec<f32>)> {
    if label >= logits.len() {
        return Err(Error::ClassMismatch {
            model: logits.len(),
            data: label + 1,
        });
    }
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let lse = max + logits.iter().map(|&l| (l as f64 - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label] as f64;
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| ((l as f64 - lse).exp() - if i == label { 1.0 } else { 0.0 }) as f32)
        .collect();
    Ok((loss, grad))
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn weight_grads(tape: &ModelTape, grad_logits: &[f32], w: &ModelWeights) -> Result<ModelWeights> {
    let bp = backprop_to_z1(tape, grad_logits, w)?;
    let k = w.num_classes();
    let mut g = ModelWeights::zeros(k);
    for c in 0..k {
        g.fc_b[c] = grad_logits[c];
        for f in 0..FEATURES {
            g.fc_w[c * FEATURES + f] = grad_logits[c] * tape.features[f];
        }
    }
    let np2 = tape.side2.0 * tape.side2.1;
    let rows2 = C1 * K * K;
    for o in 0..C2 {
        let go = &bp.gz2[o * np2..(o + 1) * np2];
        g.conv2_b[o] = go.iter().sum();
        for r in 0..rows2 {
            let col = &tape.col2[r * np2..(r + 1) * np2];
            g.conv2_w[o * rows2 + r] = go.iter().zip(col).map(|(a, b)| a * b).sum();
        }
    }
    let col1 = tape
        .col1
        .as_ref()
        .ok_or_else(|| Error::TapeMismatch("tape was recorded without first-layer columns".into()))?;
    let np1 = tape.side1.0 * tape.side1.1;
    let rows1 = CHANNELS * K * K;
    for o in 0..C1 {
        let go = &bp.gz1[o * np1..(o + 1) * np1];
        g.conv1_b[o] = go.iter().sum();
        for r in 0..rows1 {
            let col = &col1[r * np1..(r + 1) * np1];
            g.conv1_w[o * rows1 + r] = go.iter().zip(col).map(|(a, b)| a * b).sum();
        }
    }
    let _ = bp.gfeat;
    Ok(g)
}

/// Settings for training the source classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub max_epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    /// Accuracy counted as converged.
    pub target_accuracy: f64,
    /// Training stops early once validation accuracy reaches this value.
    pub stop_accuracy: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 40,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            target_accuracy: 0.90,
            stop_accuracy: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub epochs_run: usize,
    pub val_accuracy: f64,
    /// False when `target_accuracy` was never reached (DidNotConverge).
    pub converged: bool,
}

/// Trains the stand-in classifier on a labelled source dataset and freezes
/// it. The best-validation weights are returned even when the target
/// accuracy is missed; `converged` records whether it was reached.
pub fn pretrain(data: &Dataset, cfg: &PretrainConfig, rng: RngStream) -> Result<(FrozenModel, PretrainReport)> {
    let train = data.indices(crate::data::SplitTag::Train);
    let val = data.indices(crate::data::SplitTag::Val);
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let k = data.num_classes;
    let mut weights = ModelWeights::random(k, rng.derive("init"));
    let accuracy = |w: &ModelWeights| -> Result<f64> {
        let correct: Result<Vec<bool>> = val
            .par_iter()
            .map(|&i| {
                let (logits, _) = forward_impl(&data.images[i], w, None, false)?;
                Ok(argmax(&logits) == data.labels[i])
            })
            .collect();
        Ok(correct?.iter().filter(|&&c| c).count() as f64 / val.len() as f64)
    };
    let mut best = (accuracy(&weights)?, weights.clone());
    let mut velocity = ModelWeights::zeros(k);
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        if best.0 >= cfg.stop_accuracy {
            break;
        }
        epochs_run = epoch + 1;
        let order = crate::data::shuffled(&train, rng.derive("shuffle").derive_index(epoch as u64));
        // cosine-decayed learning rate per epoch
        let lr = cfg.lr * 0.5 * (1.0 + (std::f32::consts::PI * epoch as f32 / cfg.max_epochs as f32).cos());
        for batch in order.chunks(cfg.batch_size) {
            let grads: Result<Vec<ModelWeights>> = batch
                .par_iter()
                .map(|&i| {
                    let (logits, tape) = forward_impl(&data.images[i], &weights, None, true)?;
                    let (_, gl) = cross_entropy(&logits, data.labels[i])?;
                    weight_grads(&tape, &gl, &weights)
                })
                .collect();
            let mut sum = ModelWeights::zeros(k);
            for g in grads? {
                for (s, gi) in sum.groups_mut().into_iter().zip(g.groups()) {
                    s.iter_mut().zip(gi.iter()).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f32;
            for ((wg, vg), sg) in weights
                .groups_mut()
                .into_iter()
                .zip(velocity.groups_mut())
                .zip(sum.groups())
            {
                for ((wv, vv), &gv) in wg.iter_mut().zip(vg.iter_mut()).zip(sg.iter()) {
                    *vv = cfg.momentum * *vv + gv * scale + cfg.weight_decay * *wv;
                    *wv -= lr * *vv;
                }
            }
        }
        let acc = accuracy(&weights)?;
        if acc > best.0 {
            best = (acc, weights.clone());
        }
    }
    let model = FrozenModel::new(best.1)?;
    Ok((
        model,
        PretrainReport {
            epochs_run,
            val_accuracy: best.0,
            converged: best.0 >= cfg.target_accuracy,
        },
    ))
}
