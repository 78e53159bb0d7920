//! Accuracy evaluation, corruption sweeps and prompt timing.

use std::time::Instant;

use rayon::prelude::*;

use crate::augment::{corrupt, CorruptionKind, CorruptionSpec};
use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{argmax, model_forward, FrozenModel};
use crate::affine::{logit, AffineRaw};
use crate::color::MaskMode;
use crate::pipeline::{
    acavp_forward, baseline_forward, embed_autovp_as_acavp, embed_evp_as_acavp, BaselineConfig, BaselineVariant,
    Prompt, PromptInit, Variant,
};
use crate::rng::{Rng, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Accuracy per class; classes absent from the split report 0 with a
    /// count of 0.
    pub per_class: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub n: usize,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,n,accuracy\n");
        for (c, (a, n)) in self.per_class.iter().zip(&self.class_counts).enumerate() {
            s += &format!("{c},{n},{}\n", sig6(*a));
        }
        s += &format!("all,{},{}\n", self.n, sig6(self.accuracy));
        s
    }
}

/// Formats like C's `%.6g`.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    // the exponent after rounding to 6 digits picks the notation, as in C
    let sci = format!("{v:.5e}");
    let (mant, e) = sci.split_once('e').expect("exponent form");
    let e: i32 = e.parse().expect("integer exponent");
    if (-4..6).contains(&e) {
        trim(&format!("{:.*}", (5 - e) as usize, v))
    } else {
        format!("{}e{}{:02}", trim(mant), if e < 0 { '-' } else { '+' }, e.abs())
    }
}

fn correct_flags(model: &FrozenModel, prompt: Option<&Prompt>, images: &[&Image], labels: &[usize]) -> Result<Vec<bool>> {
    let prepared = prompt.map(|p| p.prepare()).transpose()?;
    images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(img, &label)| {
            let logits = match &prepared {
                Some(p) => model_forward(&p.apply(img)?, model)?.0,
                None => model_forward(img, model)?.0,
            };
            Ok(argmax(&logits) == label)
        })
        .collect()
}

fn report(flags: &[bool], labels: &[usize], k: usize) -> EvalReport {
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (&f, &l) in flags.iter().zip(labels) {
        counts[l] += 1;
        hits[l] += f as usize;
    }
    let n = flags.len();
    EvalReport {
        accuracy: hits.iter().sum::<usize>() as f64 / n as f64,
        per_class: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
            .collect(),
        class_counts: counts,
        n,
    }
}

/// Accuracy of `model` on one split, with `prompt` applied first when given.
pub fn evaluate(model: &FrozenModel, prompt: Option<&Prompt>, data: &Dataset, split: SplitTag) -> Result<EvalReport> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::EmptySplit(split.name()));
    }
    if model.num_classes() != data.num_classes {
        return Err(Error::ClassMismatch {
            model: model.num_classes(),
            data: data.num_classes,
        });
    }
    let images: Vec<&Image> = idx.iter().map(|&i| &data.images[i]).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let flags = correct_flags(model, prompt, &images, &labels)?;
    Ok(report(&flags, &labels, data.num_classes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionReport {
    pub kinds: Vec<CorruptionKind>,
    /// `accuracy[k][s - 1]` for kind `kinds[k]` at severity `s`.
    pub accuracy: Vec<[f64; 5]>,
    pub mean: f64,
}

impl CorruptionReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,severity,accuracy\n");
        for (k, row) in self.kinds.iter().zip(&self.accuracy) {
            for (i, a) in row.iter().enumerate() {
                s += &format!("{},{},{}\n", k.name(), i + 1, sig6(*a));
            }
        }
        s
    }
}

/// Evaluates the prompted model on every (kind, severity) corruption of
/// `split`. Each cell uses its own seeded stream.
pub fn corruption_eval(
    model: &FrozenModel,
    prompt: Option<&Prompt>,
    data: &Dataset,
    split: SplitTag,
    kinds: &[CorruptionKind],
    rng: RngStream,
) -> Result<CorruptionReport> {
    if kinds.is_empty() {
        return Err(Error::EmptyKinds);
    }
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::EmptySplit(split.name()));
    }
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let mut accuracy = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let mut row = [0.0; 5];
        for (s, cell) in row.iter_mut().enumerate() {
            let spec = CorruptionSpec::new(*kind, s as u8 + 1)?;
            let stream = rng.derive(kind.name()).derive_index(s as u64 + 1);
            let images: Vec<Image> = idx
                .par_iter()
                .enumerate()
                .map(|(j, &i)| corrupt(&data.images[i], spec, stream.derive_index(j as u64)))
                .collect();
            let refs: Vec<&Image> = images.iter().collect();
            let flags = correct_flags(model, prompt, &refs, &labels)?;
            *cell = report(&flags, &labels, data.num_classes).accuracy;
        }
        accuracy.push(row);
    }
    let cells: Vec<f64> = accuracy.iter().flatten().copied().collect();
    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
    Ok(CorruptionReport {
        kinds: kinds.to_vec(),
        accuracy,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub variant: Variant,
    /// Median seconds to apply the prompt to one batch.
    pub prompt_s: f64,
    pub prompt_min_s: f64,
    /// Median seconds for the model forward on one batch.
    pub model_s: f64,
    pub model_min_s: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub batch: usize,
    pub reps: usize,
    pub height: usize,
    pub width: usize,
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,prompt_s,model_s,relative\n");
        for r in &self.rows {
            s += &format!("{},{},{},{}\n", r.variant, sig6(r.prompt_s), sig6(r.model_s), sig6(r.relative));
        }
        s
    }

    pub fn row(&self, v: Variant) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

pub const BENCH_VARIANTS: [Variant; 4] = [Variant::Vp, Variant::Evp, Variant::AutoVp, Variant::Acavp];

fn median_min(mut v: Vec<f64>) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let med = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    (med, v[0])
}

fn time_reps(reps: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        f()?;
    }
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64().max(1e-9))
        })
        .collect()
}

/// Times prompt application against the model forward on random inputs, on
/// the calling thread only. When `prompts` lacks a variant a freshly
/// initialised prompt is used.
pub fn bench_timing(
    prompts: &[Prompt],
    model: &FrozenModel,
    h: usize,
    w: usize,
    batch: usize,
    reps: usize,
    rng: RngStream,
) -> Result<TimingReport> {
    if reps < 5 {
        return Err(Error::InvalidConfig(format!("bench needs at least 5 repetitions, got {reps}")));
    }
    if batch == 0 {
        return Err(Error::InvalidConfig("bench batch must be at least 1".into()));
    }
    let mut r = rng.rng();
    let inputs: Vec<Image> = (0..batch)
        .map(|_| Image::from_fn(h, w, |_, _, _| r.random::<f32>()))
        .collect();
    let warmup = 2;
    let model_times = time_reps(reps, warmup, || {
        for x in &inputs {
            std::hint::black_box(model_forward(x, model)?);
        }
        Ok(())
    })?;
    let (model_s, model_min_s) = median_min(model_times);
    let mut rows = Vec::new();
    for v in BENCH_VARIANTS {
        let prompt = prompts
            .iter()
            .find(|p| p.variant() == v && p.height() == h && p.width() == w)
            .cloned()
            .unwrap_or_else(|| Prompt::init(v, h, w, &PromptInit::default()));
        // planning is part of the timed work: it is redone whenever parameters change
        let times = time_reps(reps, warmup, || {
            let prepared = prompt.prepare()?;
            for x in &inputs {
                std::hint::black_box(prepared.apply(x)?);
            }
            Ok(())
        })?;
        let (prompt_s, prompt_min_s) = median_min(times);
        rows.push(TimingRow {
            variant: v,
            prompt_s,
            prompt_min_s,
            model_s,
            model_min_s,
            relative: prompt_s / model_s,
        });
    }
    Ok(TimingReport {
        rows,
        batch,
        reps,
        height: h,
        width: w,
    })
}

/// Outcome of the baseline-to-full-chain embedding check.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedCheck {
    pub cases: usize,
    pub max_deviation: f64,
    /// Image index of the largest deviation.
    pub worst_image: u64,
}

/// Runs EVP and AutoVP configurations through both their own forward and the
/// embedded full-chain forward on `n_images` random `side`x`side` images,
/// `configs` random configurations each, and reports the largest absolute
/// pixel deviation. `perturb` is added to the embedded x-translation and
/// exists only to exercise the failure path.
pub fn embedding_check(n_images: usize, configs: usize, side: usize, rng: RngStream, perturb: f32) -> Result<EmbedCheck> {
    if n_images == 0 || configs == 0 {
        return Err(Error::InvalidConfig("embedding check needs at least one image and one configuration".into()));
    }
    let r_sigma = PromptInit::default().r_sigma;
    let mut out = EmbedCheck {
        cases: 0,
        max_deviation: 0.0,
        worst_image: 0,
    };
    for i in 0..n_images as u64 {
        let mut r = rng.derive("image").derive_index(i).rng();
        let x = Image::from_fn(side, side, |_, _, _| r.random::<f32>());
        for j in 0..configs as u64 {
            let mut r = rng.derive("config").derive_index(i).derive_index(j).rng();
            let scale: f32 = r.random_range(0.5..0.95);
            let delta = Image::from_fn(side, side, |_, _, _| r.random_range(-1.0..1.0));
            let evp = BaselineConfig {
                variant: BaselineVariant::Evp { scale },
                delta: delta.clone(),
                mask_mode: MaskMode::Geometric,
            };
            let raw = logit(r.random_range(0.5..0.95)) as f32;
            let auto = BaselineConfig {
                variant: BaselineVariant::AutoVp { scale_raw: raw },
                delta,
                mask_mode: MaskMode::Geometric,
            };
            for (cfg, mut params) in [
                (&evp, embed_evp_as_acavp(&evp, r_sigma)?),
                (&auto, embed_autovp_as_acavp(&auto, r_sigma)?),
            ] {
                params.affine.0[AffineRaw::TX] += perturb;
                let (want, _) = baseline_forward(&x, cfg)?;
                let (got, _) = acavp_forward(&x, &params, MaskMode::Geometric)?;
                let dev = want
                    .data()
                    .iter()
                    .zip(got.data())
                    .map(|(a, b)| (*a as f64 - *b as f64).abs())
                    .fold(0.0, f64::max);
                if dev > out.max_deviation {
                    out.max_deviation = dev;
                    out.worst_image = i;
                }
                out.cases += 1;
            }
        }
    }
    Ok(out)
}
