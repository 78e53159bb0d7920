//! TrivialAugment-style training augmentation and a small corruption suite
//! for robustness evaluation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::rng::RngStream;

/// Highest magnitude bin; bins run `0..=MAX_BIN`.
pub const MAX_BIN: u8 = 30;

/// Pixel value used for regions uncovered by geometric ops.
pub const FILL: f32 = 0.5;

// Magnitude at the top bin for each parametric op. Magnitude is linear in
// the bin: `bin / MAX_BIN * max`.
pub const ROTATE_MAX_DEG: f64 = 30.0;
/// Fraction of the image side.
pub const TRANSLATE_MAX: f64 = 0.3;
pub const SHEAR_MAX: f64 = 0.3;
/// Enhancement factors are `1 ± m * ENHANCE_MAX`.
pub const ENHANCE_MAX: f32 = 0.9;
pub const POSTERIZE_MAX_DROP: f32 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugKind {
    Identity,
    Rotate,
    TranslateX,
    TranslateY,
    ShearX,
    ShearY,
    Brightness,
    Contrast,
    Solarize,
    Posterize,
    Autocontrast,
    Equalize,
    SharpnessLite,
}

impl AugKind {
    pub const ALL: [AugKind; 13] = [
        AugKind::Identity,
        AugKind::Rotate,
        AugKind::TranslateX,
        AugKind::TranslateY,
        AugKind::ShearX,
        AugKind::ShearY,
        AugKind::Brightness,
        AugKind::Contrast,
        AugKind::Solarize,
        AugKind::Posterize,
        AugKind::Autocontrast,
        AugKind::Equalize,
        AugKind::SharpnessLite,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AugKind::Identity => "identity",
            AugKind::Rotate => "rotate",
            AugKind::TranslateX => "translate-x",
            AugKind::TranslateY => "translate-y",
            AugKind::ShearX => "shear-x",
            AugKind::ShearY => "shear-y",
            AugKind::Brightness => "brightness",
            AugKind::Contrast => "contrast",
            AugKind::Solarize => "solarize",
            AugKind::Posterize => "posterize",
            AugKind::Autocontrast => "autocontrast",
            AugKind::Equalize => "equalize",
            AugKind::SharpnessLite => "sharpness-lite",
        }
    }
}

/// One concrete augmentation. `negate` flips the direction of signed ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugOp {
    pub kind: AugKind,
    pub bin: u8,
    pub negate: bool,
}

impl AugOp {
    pub fn new(kind: AugKind, bin: u8) -> Result<Self> {
        if bin > MAX_BIN {
            return Err(Error::InvalidConfig(format!("magnitude bin {bin} > {MAX_BIN}")));
        }
        Ok(Self {
            kind,
            bin,
            negate: false,
        })
    }

    fn magnitude(&self) -> f64 {
        let m = self.bin as f64 / MAX_BIN as f64;
        if self.negate {
            -m
        } else {
            m
        }
    }
}

/// Draws the op: kind uniform over the pool, bin uniform, sign uniform.
pub fn draw_op(rng: RngStream) -> AugOp {
    let mut r = rng.rng();
    let kind = AugKind::ALL[r.random_range(0..AugKind::ALL.len())];
    let bin = r.random_range(0..=MAX_BIN);
    let negate = r.random::<bool>();
    AugOp { kind, bin, negate }
}

pub fn trivial_augment(img: &Image, rng: RngStream) -> Image {
    apply_op(img, draw_op(rng))
}

/// Inverse-maps each output pixel through `m` (pixel-centre coordinates about
/// the image centre) with bilinear sampling and constant fill.
fn warp_pixels(img: &Image, m: [[f64; 2]; 2], shift: (f64, f64)) -> Image {
    let (h, w) = (img.height(), img.width());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = Image::filled(h, w, FILL);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 - cx - shift.0, y as f64 - cy - shift.1);
            let sx = m[0][0] * px + m[0][1] * py + cx;
            let sy = m[1][0] * px + m[1][1] * py + cy;
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for c in 0..CHANNELS {
                let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
                let bot = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
                out.set(c, y, x, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

fn map_pixels(img: &Image, f: impl Fn(f32) -> f32) -> Image {
    let data = img.data().iter().map(|&v| f(v)).collect();
    Image::from_parts(img.height(), img.width(), data)
}

fn blend(a: &Image, b: &Image, t: f32) -> Image {
    // a + t (b - a); t = 1 returns b
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + t * (y - x)).collect();
    Image::from_parts(a.height(), a.width(), data)
}

fn gray_mean(img: &Image) -> f32 {
    let n = img.plane_len() as f64;
    let s: f64 = (0..img.plane_len())
        .map(|i| (0.299 * img.plane(0)[i] + 0.587 * img.plane(1)[i] + 0.114 * img.plane(2)[i]) as f64)
        .sum();
    (s / n) as f32
}

fn quantize(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

fn histogram(plane: &[f32]) -> [usize; 256] {
    let mut h = [0usize; 256];
    for &v in plane {
        h[quantize(v)] += 1;
    }
    h
}

fn autocontrast(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..CHANNELS {
        let h = histogram(img.plane(c));
        let lo = h.iter().position(|&n| n > 0).unwrap_or(0);
        let hi = h.iter().rposition(|&n| n > 0).unwrap_or(255);
        if hi <= lo {
            continue;
        }
        let (lo, hi) = (lo as f32 / 255.0, hi as f32 / 255.0);
        for v in out.plane_mut(c) {
            *v = (*v - lo) / (hi - lo);
        }
    }
    out
}

fn equalize(img: &Image) -> Image {
    let mut out = img.clone();
    let n = img.plane_len();
    for c in 0..CHANNELS {
        let h = histogram(img.plane(c));
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for (i, &k) in h.iter().enumerate() {
            acc += k;
            cdf[i] = acc;
        }
        let first = h.iter().position(|&k| k > 0).map_or(0, |i| cdf[i]);
        if n == first {
            continue;
        }
        for v in out.plane_mut(c) {
            let q = cdf[quantize(*v)];
            *v = (q - first) as f32 / (n - first) as f32;
        }
    }
    out
}

/// Box blur of the given radius with edge replication.
fn box_blur(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let r = radius as i64;
    let mut out = Image::zeros(h, w);
    for c in 0..CHANNELS {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut s = 0.0f64;
                for dy in -r..=r {
                    let yy = (y + dy).clamp(0, h as i64 - 1) as usize;
                    for dx in -r..=r {
                        let xx = (x + dx).clamp(0, w as i64 - 1) as usize;
                        s += src[yy * w + xx] as f64;
                    }
                }
                dst[y as usize * w + x as usize] = (s / ((2 * r + 1) * (2 * r + 1)) as f64) as f32;
            }
        }
    }
    out
}

/// Applies one op and clamps to `[0, 1]`.
pub fn apply_op(img: &Image, op: AugOp) -> Image {
    let m = op.magnitude();
    let (h, w) = (img.height() as f64, img.width() as f64);
    let enhance = 1.0 + m as f32 * ENHANCE_MAX;
    let out = match op.kind {
        AugKind::Identity => img.clone(),
        AugKind::Rotate => {
            let (s, c) = (m * ROTATE_MAX_DEG).to_radians().sin_cos();
            warp_pixels(img, [[c, s], [-s, c]], (0.0, 0.0))
        }
        AugKind::TranslateX => warp_pixels(img, [[1.0, 0.0], [0.0, 1.0]], (m * TRANSLATE_MAX * w, 0.0)),
        AugKind::TranslateY => warp_pixels(img, [[1.0, 0.0], [0.0, 1.0]], (0.0, m * TRANSLATE_MAX * h)),
        AugKind::ShearX => warp_pixels(img, [[1.0, m * SHEAR_MAX], [0.0, 1.0]], (0.0, 0.0)),
        AugKind::ShearY => warp_pixels(img, [[1.0, 0.0], [m * SHEAR_MAX, 1.0]], (0.0, 0.0)),
        AugKind::Brightness => map_pixels(img, |v| v * enhance),
        AugKind::Contrast => {
            let mean = gray_mean(img);
            map_pixels(img, |v| mean + enhance * (v - mean))
        }
        AugKind::Solarize => {
            let t = 1.0 - m.abs() as f32;
            map_pixels(img, |v| if v > t { 1.0 - v } else { v })
        }
        AugKind::Posterize => {
            let bits = 8.0 - (m.abs() as f32 * POSTERIZE_MAX_DROP).round();
            let levels = 2f32.powf(bits);
            map_pixels(img, |v| (v * (levels - 1.0)).round() / (levels - 1.0))
        }
        AugKind::Autocontrast => autocontrast(img),
        AugKind::Equalize => equalize(img),
        AugKind::SharpnessLite => blend(&box_blur(img, 1), img, enhance),
    };
    out.clamp01()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    GaussianNoise,
    Brightness,
    Contrast,
    BoxBlur,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::BoxBlur,
        CorruptionKind::Pixelate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::BoxBlur => "box-blur",
            CorruptionKind::Pixelate => "pixelate",
        }
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown corruption `{s}`")))
    }
}

/// Per-severity parameters, index `severity - 1`.
pub const NOISE_STD: [f32; 5] = [0.04, 0.06, 0.08, 0.09, 0.10];
pub const BRIGHTNESS_SHIFT: [f32; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const CONTRAST_FACTOR: [f32; 5] = [0.75, 0.5, 0.4, 0.3, 0.15];
pub const BLUR_RADIUS: [usize; 5] = [1, 1, 2, 2, 3];
// block sizes nest, so each severity averages over a coarsening of the previous partition
pub const PIXELATE_BLOCK: [usize; 5] = [2, 2, 4, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::InvalidConfig(format!("severity {severity} outside 1..=5")));
        }
        Ok(Self { kind, severity })
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }
}

fn pixelate(img: &Image, block: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for c in 0..CHANNELS {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for by in (0..h).step_by(block) {
            for bx in (0..w).step_by(block) {
                let (ye, xe) = ((by + block).min(h), (bx + block).min(w));
                let mut s = 0.0f64;
                for y in by..ye {
                    for x in bx..xe {
                        s += src[y * w + x] as f64;
                    }
                }
                let mean = (s / ((ye - by) * (xe - bx)) as f64) as f32;
                for y in by..ye {
                    for x in bx..xe {
                        dst[y * w + x] = mean;
                    }
                }
            }
        }
    }
    out
}

/// Applies a corruption. Output is clamped to `[0, 1]`; only the noise kind
/// consumes randomness.
pub fn corrupt(img: &Image, spec: CorruptionSpec, rng: RngStream) -> Image {
    let s = spec.severity as usize - 1;
    let out = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let mut r = rng.rng();
            let std = NOISE_STD[s];
            let data = img
                .data()
                .iter()
                .map(|&v| {
                    let n: f32 = StandardNormal.sample(&mut r);
                    v + std * n
                })
                .collect();
            Image::from_parts(img.height(), img.width(), data)
        }
        CorruptionKind::Brightness => map_pixels(img, |v| v + BRIGHTNESS_SHIFT[s]),
        CorruptionKind::Contrast => {
            let mean = img.mean() as f32;
            map_pixels(img, |v| mean + CONTRAST_FACTOR[s] * (v - mean))
        }
        CorruptionKind::BoxBlur => box_blur(img, BLUR_RADIUS[s]),
        CorruptionKind::Pixelate => pixelate(img, PIXELATE_BLOCK[s]),
    };
    out.clamp01()
}
