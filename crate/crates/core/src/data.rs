//! Labelled image collections: synthetic shapes, IDX ingestion, splitting,
//! and the domain shift that defines the adaptation task.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn name(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Vec<SplitTag>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, num_classes: usize, provenance: impl Into<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ClassMismatch {
                model: num_classes,
                data: bad + 1,
            });
        }
        let splits = vec![SplitTag::Train; images.len()];
        Ok(Self {
            images,
            labels,
            num_classes,
            splits,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == tag).collect()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        [SplitTag::Train, SplitTag::Val, SplitTag::Test].map(|t| self.splits.iter().filter(|&&s| s == t).count())
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// New dataset holding only the samples of one split (tagged with it).
    pub fn subset(&self, tag: SplitTag) -> Dataset {
        let idx = self.indices(tag);
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            splits: vec![tag; idx.len()],
            provenance: format!("{} [{}]", self.provenance, tag.name()),
        }
    }

    /// Applies `f` to every image, keeping labels and split tags.
    pub fn map_images(&self, f: impl Fn(usize, &Image) -> Image) -> Dataset {
        Dataset {
            images: self.images.iter().enumerate().map(|(i, img)| f(i, img)).collect(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            splits: self.splits.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

pub(crate) fn shuffled(indices: &[usize], rng: RngStream) -> Vec<usize> {
    let mut v = indices.to_vec();
    v.shuffle(&mut rng.rng());
    v
}

/// Shape families in class-index order.
pub const SHAPES: [&str; 8] = ["circle", "square", "triangle", "cross", "ring", "diamond", "frame", "saltire"];

fn inside(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => ax <= r * 0.85 && ay <= r * 0.85,
        2 => {
            // upward triangle with apex at -r, base at +0.8r
            let t = (dy + r) / (1.8 * r);
            (0.0..=1.0).contains(&t) && ax <= t * r
        }
        3 => (ax <= r * 0.33 && ay <= r) || (ay <= r * 0.33 && ax <= r),
        4 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
        5 => ax + ay <= r,
        6 => (ax <= r * 0.85 && ay <= r * 0.85) && !(ax <= r * 0.45 && ay <= r * 0.45),
        _ => {
            let d1 = (dx - dy).abs() / std::f64::consts::SQRT_2;
            let d2 = (dx + dy).abs() / std::f64::consts::SQRT_2;
            (d1 <= r * 0.25 || d2 <= r * 0.25) && ax <= r * 0.8 && ay <= r * 0.8
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

/// Draws one shape image of class `label`.
pub fn render_shape(label: usize, h: usize, w: usize, rng: &mut impl Rng) -> Image {
    let side = h.min(w) as f64;
    let r = side * rng.random_range(0.12..0.28);
    let cx = rng.random_range(r..(w as f64 - r));
    let cy = rng.random_range(r..(h as f64 - r));
    let fg = hsv_to_rgb(rng.random_range(-0.05..0.12), rng.random_range(0.6..1.0), rng.random_range(0.75..1.0));
    let bg = hsv_to_rgb(rng.random_range(0.5..0.7), rng.random_range(0.3..0.8), rng.random_range(0.05..0.3));
    let noise = Normal::new(0.0f32, 0.02).expect("valid std");
    let mut img = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let on = inside(label, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r);
            let col = if on { fg } else { bg };
            for c in 0..CHANNELS {
                img.set(c, y, x, (col[c] + noise.sample(rng)).clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Seeded synthetic dataset with exactly balanced labels (round-robin).
pub fn gen_shapes(n: usize, h: usize, w: usize, num_classes: usize, rng: RngStream) -> Result<Dataset> {
    if !(2..=SHAPES.len()).contains(&num_classes) {
        return Err(Error::BadClassCount(num_classes));
    }
    if h < 8 || w < 8 {
        return Err(Error::InvalidConfig(format!("canvas {h}x{w} is too small")));
    }
    let mut r = rng.rng();
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut r);
    let images = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| render_shape(l, h, w, &mut rng.derive_index(i as u64).rng()))
        .collect();
    Dataset::new(
        images,
        labels,
        num_classes,
        format!("shapes(n={n}, {h}x{w}, k={num_classes}, seed={}, stream={})", rng.seed, rng.stream_id),
    )
}

/// Global domain shift applied identically to every image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftConfig {
    /// Rotation of RGB about the gray axis, in degrees.
    pub hue_degrees: f32,
    /// Integer pixel translation; vacated pixels replicate the edge.
    pub translate: (i32, i32),
    /// Black-level lift: `x ↦ x + delta · (1 - x)`.
    pub background_delta: f32,
    /// Standard deviation of additive sensor noise (0 disables it).
    pub noise_std: f32,
    pub seed: u64,
}

impl ShiftConfig {
    pub fn none() -> Self {
        Self {
            hue_degrees: 0.0,
            translate: (0, 0),
            background_delta: 0.0,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl Default for ShiftConfig {
    /// The target domain of the default adaptation task.
    fn default() -> Self {
        Self {
            hue_degrees: 60.0,
            translate: (3, -2),
            background_delta: 0.2,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

fn hue_matrix(deg: f32) -> [[f32; 3]; 3] {
    let (s, c) = (deg.to_radians() as f64).sin_cos();
    let k = (1.0 - c) / 3.0;
    let q = (1.0f64 / 3.0).sqrt() * s;
    let m = [[c + k, k - q, k + q], [k + q, c + k, k - q], [k - q, k + q, c + k]];
    m.map(|row| row.map(|v| v as f32))
}

pub fn shift_image(img: &Image, cfg: &ShiftConfig, index: u64) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let (tx, ty) = cfg.translate;
    if (tx.unsigned_abs() as usize) * 4 >= w || (ty.unsigned_abs() as usize) * 4 >= h {
        return Err(Error::InvalidConfig(format!("translation {:?} too large for {h}x{w}", cfg.translate)));
    }
    if ![cfg.hue_degrees, cfg.background_delta, cfg.noise_std].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteInput("shift config"));
    }
    let mut out = Image::zeros(h, w);
    let m = hue_matrix(cfg.hue_degrees);
    let rotate = cfg.hue_degrees != 0.0;
    let mut noise_rng = RngStream::new(cfg.seed).derive("shift-noise").derive_index(index).rng();
    let noise = Normal::new(0.0f32, cfg.noise_std.max(0.0)).expect("valid std");
    for y in 0..h {
        let sy = (y as i64 - ty as i64).clamp(0, h as i64 - 1) as usize;
        for x in 0..w {
            let sx = (x as i64 - tx as i64).clamp(0, w as i64 - 1) as usize;
            let p = [img.get(0, sy, sx), img.get(1, sy, sx), img.get(2, sy, sx)];
            for c in 0..CHANNELS {
                let mut v = if rotate {
                    m[c][0] * p[0] + m[c][1] * p[1] + m[c][2] * p[2]
                } else {
                    p[c]
                };
                if cfg.background_delta != 0.0 {
                    v += cfg.background_delta * (1.0 - v);
                }
                if cfg.noise_std > 0.0 {
                    v += noise.sample(&mut noise_rng);
                }
                out.set(c, y, x, if rotate || cfg.background_delta != 0.0 || cfg.noise_std > 0.0 { v.clamp(0.0, 1.0) } else { v });
            }
        }
    }
    Ok(out)
}

pub fn shift_domain(d: &Dataset, cfg: &ShiftConfig) -> Result<Dataset> {
    let images = d
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| shift_image(img, cfg, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        images,
        labels: d.labels.clone(),
        num_classes: d.num_classes,
        splits: d.splits.clone(),
        provenance: format!("{} + shift{cfg:?}", d.provenance),
    })
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(b: &[u8], at: usize, what: &str) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::DimensionMismatch(format!("{what}: header truncated")))
}

/// Parses a big-endian IDX image/label pair. Grayscale is replicated to three
/// channels and scaled by 1/255. All samples are tagged `train`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(Error::BadMagic(format!("image file magic {magic:#010x}")));
    }
    let lmagic = be_u32(labels, 0, "labels")?;
    if lmagic != IDX_LABELS {
        return Err(Error::BadMagic(format!("label file magic {lmagic:#010x}")));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let nl = be_u32(labels, 4, "labels")? as usize;
    if n != nl {
        return Err(Error::CountMismatch { images: n, labels: nl });
    }
    let px = rows * cols;
    if images.len() != 16 + n * px {
        return Err(Error::DimensionMismatch(format!(
            "image payload is {} bytes, header implies {}",
            images.len() - 16,
            n * px
        )));
    }
    if labels.len() != 8 + n {
        return Err(Error::DimensionMismatch(format!(
            "label payload is {} bytes, header implies {n}",
            labels.len() - 8
        )));
    }
    let label_vec: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let num_classes = label_vec.iter().max().map_or(0, |m| m + 1);
    let imgs = (0..n)
        .map(|i| {
            let raw = &images[16 + i * px..16 + (i + 1) * px];
            let plane: Vec<f32> = raw.iter().map(|&b| b as f32 / 255.0).collect();
            let mut data = Vec::with_capacity(3 * px);
            for _ in 0..CHANNELS {
                data.extend_from_slice(&plane);
            }
            Image::new(rows, cols, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(imgs, label_vec, num_classes, format!("idx({n} x {rows}x{cols})"))
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let mut d = parse_idx(&images, &labels)?;
    d.provenance = format!("idx({}, {})", ip.display(), lp.display());
    Ok(d)
}

/// Serialises a dataset's first channel as an IDX pair (used for fixtures
/// and exports).
pub fn encode_idx(d: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let (h, w) = d.images.first().map_or((0, 0), |i| (i.height(), i.width()));
    let mut img = Vec::with_capacity(16 + d.len() * h * w);
    img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    for v in [d.len(), h, w] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for im in &d.images {
        img.extend(im.plane(0).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut lab = Vec::with_capacity(8 + d.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&(d.len() as u32).to_be_bytes());
    lab.extend(d.labels.iter().map(|&l| l as u8));
    (img, lab)
}

/// Stratified shuffled split. `fractions` are (train, val, test) and must sum
/// to one; a split with a positive fraction must receive at least one sample.
pub fn split(d: &Dataset, fractions: [f64; 3], rng: RngStream) -> Result<Dataset> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions {fractions:?} must sum to 1")));
    }
    let n = d.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_val;
    for (tag, f, size) in [
        (SplitTag::Train, fractions[0], n_train),
        (SplitTag::Val, fractions[1], n_val),
        (SplitTag::Test, fractions[2], n_test),
    ] {
        if f > 0.0 && size == 0 {
            return Err(Error::DegenerateSplit(format!("{} split would be empty", tag.name())));
        }
    }
    // Interleave per-class shuffled pools so every contiguous run of
    // `num_classes` samples covers each class while classes last.
    let mut r = rng.rng();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes];
    for (i, &l) in d.labels.iter().enumerate() {
        pools[l].push(i);
    }
    for p in &mut pools {
        p.shuffle(&mut r);
    }
    let mut order = Vec::with_capacity(n);
    let mut round = 0;
    while order.len() < n {
        let mut classes: Vec<usize> = (0..d.num_classes).filter(|&c| round < pools[c].len()).collect();
        classes.shuffle(&mut r);
        order.extend(classes.into_iter().map(|c| pools[c][round]));
        round += 1;
    }
    let mut out = d.clone();
    for (pos, &i) in order.iter().enumerate() {
        out.splits[i] = if pos < n_train {
            SplitTag::Train
        } else if pos < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    Ok(out)
}

/// Parameters of the source/target shapes adaptation task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub source_train: usize,
    pub source_val: usize,
    pub target_train: usize,
    pub target_val: usize,
    pub target_test: usize,
    pub shift: ShiftConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: 4,
            source_train: 2000,
            source_val: 200,
            target_train: 2000,
            target_val: 200,
            target_test: 500,
            shift: ShiftConfig::default(),
        }
    }
}

/// Builds the clean source dataset (train/val) and the shifted target dataset
/// (train/val/test) from independent seeded streams.
pub fn shapes_task(cfg: &TaskConfig, rng: RngStream) -> Result<(Dataset, Dataset)> {
    let split_of = |d: Dataset, sizes: [usize; 3], rng: RngStream| {
        let n = d.len() as f64;
        let f = [sizes[0] as f64 / n, sizes[1] as f64 / n, sizes[2] as f64 / n];
        split(&d, f, rng)
    };
    let n_src = cfg.source_train + cfg.source_val;
    let src = gen_shapes(n_src, cfg.height, cfg.width, cfg.num_classes, rng.derive("source"))?;
    let src = split_of(src, [cfg.source_train, cfg.source_val, 0], rng.derive("source-split"))?;
    let n_tgt = cfg.target_train + cfg.target_val + cfg.target_test;
    let tgt = gen_shapes(n_tgt, cfg.height, cfg.width, cfg.num_classes, rng.derive("target"))?;
    let mut shift = cfg.shift;
    shift.seed ^= rng.derive("shift").stream_id;
    let tgt = shift_domain(&tgt, &shift)?;
    let tgt = split_of(
        tgt,
        [cfg.target_train, cfg.target_val, cfg.target_test],
        rng.derive("target-split"),
    )?;
    Ok((src, tgt))
}
