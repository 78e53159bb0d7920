//! Prompt optimisation against a frozen model.

use rayon::prelude::*;

use crate::augment::trivial_augment;
use crate::data::{shuffled, Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::eval::{evaluate, sig6};
use crate::image::Image;
use crate::model::{argmax, cross_entropy, model_forward_train, model_input_grad, Dropout, FrozenModel};
use crate::pipeline::{PreparedPrompt, Prompt, PromptGrads, PromptInit, Variant};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    None,
    Trivial,
}

impl std::fmt::Display for Augment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Augment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augment::None),
            "trivial" => Ok(Augment::Trivial),
            other => Err(Error::InvalidConfig(format!("unknown augment `{other}`"))),
        }
    }
}

impl Augment {
    pub fn name(&self) -> &'static str {
        match self {
            Augment::None => "none",
            Augment::Trivial => "trivial",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f32,
    pub epochs: usize,
    pub momentum: f32,
    pub batch_size: usize,
    pub clip_value: f32,
    pub grad_normalize: bool,
    pub weight_decay: f32,
    pub mse_reg_weight: f32,
    pub augment: Augment,
    /// Feature dropout inside the frozen model during training.
    pub dropout: f32,
    pub seed: u64,
    pub init: PromptInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 40.0,
            epochs: 200,
            momentum: 0.9,
            batch_size: 64,
            clip_value: 0.001,
            grad_normalize: true,
            weight_decay: 0.0,
            mse_reg_weight: 0.0,
            augment: Augment::None,
            dropout: 0.0,
            seed: 0,
            init: PromptInit::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be finite and non-negative, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.clip_value.is_nan() || self.clip_value <= 0.0 {
            return bad(format!("clip_value must be positive, got {}", self.clip_value));
        }
        if !(self.weight_decay >= 0.0 && self.mse_reg_weight >= 0.0) {
            return bad("weight_decay and mse_reg_weight must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        self.init.ranges.validate()
    }
}

/// `lr0 * 0.5 * (1 + cos(pi * step / total))`.
pub fn cosine_lr(step: usize, total: usize, lr0: f32) -> f32 {
    let t = step.min(total) as f64 / total.max(1) as f64;
    (lr0 as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub grad_logits: Vec<f32>,
    /// Gradient of the MSE term with respect to the prompted image.
    pub grad_prompted: Option<Image>,
}

/// Cross-entropy plus `mse_weight * mean((x_tilde - x)^2)`.
pub fn compute_loss(logits: &[f32], label: usize, x: &Image, x_tilde: &Image, mse_weight: f32) -> Result<Loss> {
    x.check_shape(x_tilde)?;
    let (ce, grad_logits) = cross_entropy(logits, label)?;
    if mse_weight == 0.0 {
        return Ok(Loss {
            value: ce,
            grad_logits,
            grad_prompted: None,
        });
    }
    let n = x.data().len() as f64;
    let sq: f64 = x
        .data()
        .iter()
        .zip(x_tilde.data())
        .map(|(&a, &b)| (b as f64 - a as f64).powi(2))
        .sum();
    let k = 2.0 * mse_weight as f64 / n;
    let g = x
        .data()
        .iter()
        .zip(x_tilde.data())
        .map(|(&a, &b)| (k * (b as f64 - a as f64)) as f32)
        .collect();
    Ok(Loss {
        value: ce + mse_weight as f64 * sq / n,
        grad_logits,
        grad_prompted: Some(Image::from_parts(x.height(), x.width(), g)),
    })
}

/// Elementwise clamp to `[-clip, clip]`.
pub fn clip_grads(g: &mut PromptGrads, clip: f32) {
    for group in g.groups_mut() {
        group.iter_mut().for_each(|v| *v = v.clamp(-clip, clip));
    }
}

/// Scales each parameter group to unit L2 norm; near-zero groups are left
/// alone.
pub fn normalize_grads(g: &mut PromptGrads) {
    for group in g.groups_mut() {
        let norm = group.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm >= 1e-12 {
            group.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestRecord {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub prompt: Prompt,
}

/// Optimiser state: parameters, momentum buffers and the best snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub prompt: Prompt,
    pub velocity: PromptGrads,
    pub step: usize,
    pub best: BestRecord,
}

impl TrainState {
    pub fn new(prompt: Prompt, val_accuracy: f64) -> Self {
        Self {
            velocity: PromptGrads::zeros_like(&prompt),
            step: 0,
            best: BestRecord {
                epoch: 0,
                val_accuracy,
                prompt: prompt.clone(),
            },
            prompt,
        }
    }
}

/// `v <- momentum * v + (g + wd * theta)`, `theta <- theta - lr * v`.
pub fn sgd_momentum_step(state: &mut TrainState, grads: &PromptGrads, lr: f32, momentum: f32, weight_decay: f32) -> Result<()> {
    for ((theta, v), g) in state
        .prompt
        .groups_mut()
        .into_iter()
        .zip(state.velocity.groups_mut())
        .zip(grads.groups())
    {
        if theta.len() != v.len() || theta.len() != g.len() {
            return Err(Error::shape(theta.len(), g.len()));
        }
        for ((t, v), &g) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v + (g + weight_decay * *t);
            *t -= lr * *v;
        }
    }
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub rows: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_acc,val_acc\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{}\n",
                r.epoch,
                sig6(r.lr as f64),
                sig6(r.train_loss),
                sig6(r.train_acc),
                sig6(r.val_acc)
            );
        }
        s
    }
}

struct SampleOut {
    grads: PromptGrads,
    loss: f64,
    correct: bool,
}

fn sample_step(
    prompt: &PreparedPrompt<'_>,
    model: &FrozenModel,
    x: &Image,
    label: usize,
    cfg: &TrainConfig,
    dropout: Option<Dropout>,
) -> Result<SampleOut> {
    let (xt, ptape) = prompt.forward(x)?;
    let (logits, mtape) = model_forward_train(&xt, model, dropout)?;
    let loss = compute_loss(&logits, label, x, &xt, cfg.mse_reg_weight)?;
    let mut gx = model_input_grad(&mtape, &loss.grad_logits, model)?;
    if let Some(g) = &loss.grad_prompted {
        gx.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
    }
    let (grads, _) = prompt.backward(&ptape, &gx, false)?;
    Ok(SampleOut {
        grads,
        loss: loss.value,
        correct: argmax(&logits) == label,
    })
}

/// Loss and accuracy of the current prompt on one split, without
/// augmentation or dropout.
fn clean_pass(prompt: &Prompt, model: &FrozenModel, data: &Dataset, idx: &[usize]) -> Result<(f64, f64)> {
    let prompt = prompt.prepare()?;
    let out: Vec<(f64, bool)> = idx
        .par_iter()
        .map(|&i| {
            let xt = prompt.apply(&data.images[i])?;
            let (logits, _) = model_forward_train(&xt, model, None)?;
            let (l, _) = cross_entropy(&logits, data.labels[i])?;
            Ok((l, argmax(&logits) == data.labels[i]))
        })
        .collect::<Result<_>>()?;
    let n = out.len().max(1) as f64;
    Ok((
        out.iter().map(|o| o.0).sum::<f64>() / n,
        out.iter().filter(|o| o.1).count() as f64 / n,
    ))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: BestRecord,
    pub last: Prompt,
    pub log: MetricsLog,
}

/// Trains a freshly initialised prompt of `variant`.
pub fn train_prompt(cfg: &TrainConfig, model: &FrozenModel, data: &Dataset, variant: Variant) -> Result<TrainOutcome> {
    let (h, w) = data
        .images
        .first()
        .map(|i| (i.height(), i.width()))
        .ok_or(Error::EmptySplit("train"))?;
    train_prompt_from(cfg, model, data, Prompt::init(variant, h, w, &cfg.init))
}

/// Runs the optimisation loop from a given prompt. The metrics log starts
/// with an epoch-0 row describing the initial prompt (lr 0, clean train
/// pass); later rows report running train loss/accuracy over the epoch's
/// (possibly augmented) batches. The returned best snapshot is the earliest
/// prompt reaching the highest validation accuracy.
pub fn train_prompt_from(cfg: &TrainConfig, model: &FrozenModel, data: &Dataset, init: Prompt) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = data.indices(SplitTag::Train);
    let val = data.indices(SplitTag::Val);
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    if model.num_classes() != data.num_classes {
        return Err(Error::ClassMismatch {
            model: model.num_classes(),
            data: data.num_classes,
        });
    }
    let checksum = model.checksum();
    let base = RngStream::new(cfg.seed);
    let val_acc = |p: &Prompt| evaluate(model, Some(p), data, SplitTag::Val).map(|r| r.accuracy);

    let (loss0, acc0) = clean_pass(&init, model, data, &train).map_err(|e| at_step(0, e))?;
    let val0 = val_acc(&init).map_err(|e| at_step(0, e))?;
    let mut state = TrainState::new(init, val0);
    let mut log = MetricsLog {
        rows: vec![EpochMetrics {
            epoch: 0,
            lr: 0.0,
            train_loss: loss0,
            train_acc: acc0,
            val_acc: val0,
        }],
    };

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
        let epoch_rng = base.derive("epoch").derive_index(epoch as u64);
        let order = shuffled(&train, epoch_rng.derive("shuffle"));
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let prepared = state.prompt.prepare().map_err(|e| at_step(state.step, e))?;
            let prompt = &prepared;
            let outs: Vec<SampleOut> = batch
                .par_iter()
                .map(|&i| {
                    let x = match cfg.augment {
                        Augment::None => std::borrow::Cow::Borrowed(&data.images[i]),
                        Augment::Trivial => std::borrow::Cow::Owned(trivial_augment(
                            &data.images[i],
                            epoch_rng.derive("aug").derive_index(i as u64),
                        )),
                    };
                    let dropout = (cfg.dropout > 0.0).then(|| Dropout {
                        rate: cfg.dropout,
                        rng: epoch_rng.derive("dropout").derive_index(i as u64),
                    });
                    sample_step(prompt, model, &x, data.labels[i], cfg, dropout)
                })
                .collect::<Result<_>>()
                .map_err(|e| at_step(state.step, e))?;
            // ordered reduction keeps results independent of thread count
            let mut grads = PromptGrads::zeros_like(&state.prompt);
            for o in &outs {
                grads.add_assign(&o.grads)?;
                loss_sum += o.loss;
                hits += o.correct as usize;
            }
            grads.scale(1.0 / outs.len() as f32);
            if cfg.grad_normalize {
                normalize_grads(&mut grads);
            }
            clip_grads(&mut grads, cfg.clip_value);
            sgd_momentum_step(&mut state, &grads, lr, cfg.momentum, cfg.weight_decay)?;
        }
        let val = val_acc(&state.prompt).map_err(|e| at_step(state.step, e))?;
        if val > state.best.val_accuracy {
            state.best = BestRecord {
                epoch: epoch + 1,
                val_accuracy: val,
                prompt: state.prompt.clone(),
            };
        }
        log.rows.push(EpochMetrics {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_acc: val,
        });
    }
    debug_assert_eq!(checksum, model.checksum(), "frozen model changed during training");
    Ok(TrainOutcome {
        best: state.best,
        last: state.prompt,
        log,
    })
}

fn at_step(step: usize, e: Error) -> Error {
    Error::AtStep {
        step,
        source: Box::new(e),
    }
}
