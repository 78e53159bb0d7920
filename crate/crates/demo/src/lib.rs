//! Browser demo: a shifted shape image pushed through the prompt pipeline,
//! the augmentation pool and the corruption ladder. Every operation returns
//! RGBA bytes ready for `ImageData`.

use promptforge::affine::{AffineRanges, AffineRaw};
use promptforge::augment::{apply_op, corrupt, AugKind, AugOp, CorruptionKind, CorruptionSpec};
use promptforge::color::{MaskMode, DEFAULT_R_SIGMA};
use promptforge::data::{render_shape, shift_image, ShiftConfig};
use promptforge::error::Error;
use promptforge::image::Image;
use promptforge::pipeline::{init_params, Prompt};
use promptforge::rng::{Rng, RngStream};
use wasm_bindgen::prelude::*;

/// Slider positions for the prompt panel. Affine entries are raw values
/// before squashing; `color` is the raw colour value shared by every pixel.
#[wasm_bindgen]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PromptKnobs {
    pub tx: f32,
    pub ty: f32,
    pub theta: f32,
    pub scale: f32,
    pub shear: f32,
    pub color: f32,
    /// Amplitude of the additive pattern on the masked border.
    pub pattern: f32,
}

#[wasm_bindgen]
impl PromptKnobs {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Self {
        Self::default()
    }
}

/// Result of one prompt render.
#[wasm_bindgen]
pub struct Rendered {
    rgba: Vec<u8>,
    mask_fraction: f64,
}

#[wasm_bindgen]
impl Rendered {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mask_fraction(&self) -> f64 {
        self.mask_fraction
    }
}

#[wasm_bindgen]
pub struct Demo {
    image: Image,
    pattern: Image,
}

impl Demo {
    /// Shape `label` drawn at `size`², moved into the default target domain.
    pub fn build(label: usize, size: usize, seed: u64) -> Result<Self, Error> {
        let stream = RngStream::new(seed);
        let mut r = stream.derive("shape").rng();
        let clean = render_shape(label, size, size, &mut r);
        let image = shift_image(&clean, &ShiftConfig::default(), 0)?;
        let mut r = stream.derive("pattern").rng();
        let pattern = Image::from_fn(size, size, |_, _, _| r.random_range(-1.0..1.0));
        Ok(Self { image, pattern })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn prompt_image(&self, k: &PromptKnobs) -> Result<(Image, f64), Error> {
        let (h, w) = (self.image.height(), self.image.width());
        let mut p = init_params(h, w, AffineRanges::default(), DEFAULT_R_SIGMA);
        let raw = &mut p.affine.0;
        raw[AffineRaw::TX] = k.tx;
        raw[AffineRaw::TY] = k.ty;
        raw[AffineRaw::THETA] = k.theta;
        raw[AffineRaw::SX] += k.scale;
        raw[AffineRaw::SY] += k.scale;
        raw[AffineRaw::SHX] = k.shear;
        raw[AffineRaw::SHY] = -k.shear;
        for v in p.color.sigma.data_mut() {
            *v += k.color;
        }
        for (d, &s) in p.additive.delta.data_mut().iter_mut().zip(self.pattern.data()) {
            *d = k.pattern * s;
        }
        let prompt = Prompt::Acavp {
            params: p,
            mask_mode: MaskMode::Geometric,
        };
        let stages = prompt.stages(&self.image)?;
        Ok((stages.output, stages.mask.fraction()))
    }

    pub fn augment_image(&self, kind: &str, bin: u8, negate: bool) -> Result<Image, Error> {
        let kind = AugKind::ALL
            .into_iter()
            .find(|k| k.name() == kind)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown augmentation `{kind}`")))?;
        let op = AugOp {
            negate,
            ..AugOp::new(kind, bin)?
        };
        Ok(apply_op(&self.image, op))
    }

    pub fn corrupt_image(&self, kind: &str, severity: u8, seed: u64) -> Result<Image, Error> {
        let kind: CorruptionKind = kind.parse()?;
        Ok(corrupt(&self.image, CorruptionSpec::new(kind, severity)?, RngStream::new(seed)))
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

// seeds cross the JS boundary as u32: a u64 would arrive as a BigInt
#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(label: usize, size: usize, seed: u32) -> Result<Demo, JsError> {
        Self::build(label, size, seed.into()).map_err(js)
    }

    pub fn original(&self) -> Vec<u8> {
        rgba(&self.image)
    }

    pub fn prompt(&self, knobs: &PromptKnobs) -> Result<Rendered, JsError> {
        let (img, mask_fraction) = self.prompt_image(knobs).map_err(js)?;
        Ok(Rendered {
            rgba: rgba(&img),
            mask_fraction,
        })
    }

    pub fn augment(&self, kind: &str, bin: u8, negate: bool) -> Result<Vec<u8>, JsError> {
        self.augment_image(kind, bin, negate).map(|i| rgba(&i)).map_err(js)
    }

    pub fn corrupt(&self, kind: &str, severity: u8, seed: u32) -> Result<Vec<u8>, JsError> {
        self.corrupt_image(kind, severity, seed.into()).map(|i| rgba(&i)).map_err(js)
    }
}

/// Names accepted by [`Demo::augment`], comma separated.
#[wasm_bindgen]
pub fn augment_kinds() -> String {
    AugKind::ALL.map(|k| k.name()).join(",")
}

#[wasm_bindgen]
pub fn corruption_kinds() -> String {
    CorruptionKind::ALL.map(|k| k.name()).join(",")
}

/// Interleaved 8-bit RGBA with opaque alpha.
pub fn rgba(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((img.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}
