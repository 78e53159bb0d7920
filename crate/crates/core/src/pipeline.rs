//! End-to-end prompting transforms: the affine → colour → additive chain,
//! the additive-only baselines, and the exact embeddings of the resize-based
//! baselines into the full chain.

use std::sync::Arc;

use crate::affine::{
    build_matrix, constrain_affine, logit, matrix_grad_to_raw, sigmoid, warp_backward_image, warp_backward_matrix,
    warp_grid, warp_with_grid, AffineConstrained, AffineMatrix, AffineRanges, AffineRaw,
    SquashJacobian, WarpGrid, WarpTape,
};
use crate::color::{
    apply_color_additive, color_additive_backward, constrain_color, generate_mask, AdditivePrompt, ColorPrompt,
    MaskMode,
};
use crate::error::{Error, Result};
use crate::image::{Image, Mask, CHANNELS};
use crate::tensorfile::{find, TensorEntry};

/// Scale used to initialise the affine prompt (224 → 164 resize).
pub const INIT_SCALE: f64 = 0.73;

/// Border width of the padding baseline on a 224×224 canvas.
pub const VP_PAD_224: usize = 28;

/// Every learnable quantity of the affine/colour/additive prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams {
    pub affine: AffineRaw,
    pub ranges: AffineRanges,
    pub color: ColorPrompt,
    pub additive: AdditivePrompt,
}

impl PromptParams {
    pub fn height(&self) -> usize {
        self.additive.delta.height()
    }

    pub fn width(&self) -> usize {
        self.additive.delta.width()
    }

    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        if !self.affine.is_finite() {
            return Err(Error::NonFiniteInput("affine parameters"));
        }
        self.color.sigma.check_shape(&self.additive.delta)
    }

    pub fn to_entries(&self) -> Vec<TensorEntry> {
        let (h, w) = (self.height(), self.width());
        vec![
            TensorEntry::new("affine.raw", vec![7], self.affine.0.to_vec()),
            TensorEntry::new(
                "affine.ranges",
                vec![3],
                vec![self.ranges.r_t, self.ranges.r_theta, self.ranges.r_sh],
            ),
            TensorEntry::new("color.sigma", vec![3, h, w], self.color.sigma.data().to_vec()),
            TensorEntry::scalar("color.range", self.color.r_sigma),
            TensorEntry::new("additive.delta", vec![3, h, w], self.additive.delta.data().to_vec()),
        ]
    }

    pub fn from_entries(entries: &[TensorEntry]) -> Result<Self> {
        let raw = find(entries, "affine.raw", Some(7))?;
        let ranges = find(entries, "affine.ranges", Some(3))?;
        let sigma = find(entries, "color.sigma", None)?;
        let range = find(entries, "color.range", Some(1))?;
        let delta = find(entries, "additive.delta", None)?;
        let (h, w) = plane_dims(sigma)?;
        let mut a = [0.0f32; 7];
        a.copy_from_slice(&raw.data);
        let p = Self {
            affine: AffineRaw(a),
            ranges: AffineRanges {
                r_t: ranges.data[0],
                r_theta: ranges.data[1],
                r_sh: ranges.data[2],
            },
            color: ColorPrompt {
                sigma: Image::new(h, w, sigma.data.clone())?,
                r_sigma: range.data[0],
            },
            additive: AdditivePrompt {
                delta: image_entry(delta, h, w)?,
            },
        };
        p.validate()?;
        Ok(p)
    }
}

fn plane_dims(e: &TensorEntry) -> Result<(usize, usize)> {
    match e.dims.as_slice() {
        [3, h, w] => Ok((*h, *w)),
        other => Err(Error::DimensionMismatch(format!("{}: expected [3, H, W], got {other:?}", e.name))),
    }
}

fn image_entry(e: &TensorEntry, h: usize, w: usize) -> Result<Image> {
    if plane_dims(e)? != (h, w) {
        return Err(Error::DimensionMismatch(format!("{} does not match 3x{h}x{w}", e.name)));
    }
    Image::new(h, w, e.data.clone())
}

/// Initial prompt: centered 0.73 resize, σ̂ = 1, δ = 0.
pub fn init_params(h: usize, w: usize, ranges: AffineRanges, r_sigma: f32) -> PromptParams {
    PromptParams {
        affine: AffineRaw::scaling(INIT_SCALE),
        ranges,
        color: ColorPrompt::identity(h, w, r_sigma),
        additive: AdditivePrompt::zeros(h, w),
    }
}

/// Gradients grouped as affine scalars, colour field, additive field.
///
/// Group lengths mirror the prompt's parameter groups; groups a variant does
/// not learn are empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptGrads {
    pub affine: Vec<f32>,
    pub color: Vec<f32>,
    pub additive: Vec<f32>,
}

impl PromptGrads {
    pub fn zeros_like(p: &Prompt) -> Self {
        let [a, c, d] = p.groups();
        Self {
            affine: vec![0.0; a.len()],
            color: vec![0.0; c.len()],
            additive: vec![0.0; d.len()],
        }
    }

    pub fn groups(&self) -> [&[f32]; 3] {
        [&self.affine, &self.color, &self.additive]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f32>; 3] {
        [&mut self.affine, &mut self.color, &mut self.additive]
    }

    pub fn is_zero(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|&v| v == 0.0))
    }

    pub fn add_assign(&mut self, other: &PromptGrads) -> Result<()> {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            if dst.len() != src.len() {
                return Err(Error::shape(dst.len(), src.len()));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f32) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Per-parameter quantities of the full chain that do not depend on the
/// input image: squashed values, the warp grid and the colour field.
#[derive(Debug, Clone)]
pub struct AcavpPlan {
    constrained: AffineConstrained,
    squash: SquashJacobian,
    grid: Arc<WarpGrid>,
    sigma_hat: Image,
    sigma_jac: Image,
    delta: Image,
    mode: MaskMode,
    /// Fixed mask in geometric mode.
    mask: Option<Mask>,
}

impl AcavpPlan {
    pub fn new(p: &PromptParams, mode: MaskMode) -> Result<Self> {
        p.color.sigma.check_shape(&p.additive.delta)?;
        let (h, w) = (p.height(), p.width());
        let (constrained, squash) = constrain_affine(&p.affine, &p.ranges)?;
        let grid = Arc::new(warp_grid(h, w, &build_matrix(&constrained))?);
        let (sigma_hat, sigma_jac) = constrain_color(&p.color)?;
        let mask = match mode {
            MaskMode::Geometric => Some(Mask::from_bools(h, w, grid.in_bounds().iter().map(|&b| !b))),
            MaskMode::ZeroTest => None,
        };
        Ok(Self {
            constrained,
            squash,
            grid,
            sigma_hat,
            sigma_jac,
            delta: p.additive.delta.clone(),
            mode,
            mask,
        })
    }

    pub fn constrained(&self) -> &AffineConstrained {
        &self.constrained
    }

    pub fn sigma_hat(&self) -> &Image {
        &self.sigma_hat
    }

    pub fn grid(&self) -> &WarpGrid {
        &self.grid
    }
}

/// Cached intermediates of one prompt forward pass.
#[derive(Debug, Clone)]
pub struct AcavpTape {
    plan: Arc<AcavpPlan>,
    warp: WarpTape,
    warped: Image,
    mask: Mask,
}

impl AcavpTape {
    pub fn warped(&self) -> &Image {
        &self.warped
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn constrained(&self) -> &AffineConstrained {
        &self.plan.constrained
    }

    pub fn warp(&self) -> &WarpTape {
        &self.warp
    }
}

/// `x̃ = Affine(x, A) ⊙ σ̂ + M ⊙ δ`, applied in that order.
pub fn acavp_forward(x: &Image, p: &PromptParams, mode: MaskMode) -> Result<(Image, AcavpTape)> {
    acavp_forward_planned(x, &Arc::new(AcavpPlan::new(p, mode)?))
}

/// [`acavp_forward`] with the image-independent work done up front.
pub fn acavp_forward_planned(x: &Image, plan: &Arc<AcavpPlan>) -> Result<(Image, AcavpTape)> {
    x.check_shape(&plan.delta)?;
    let (warped, warp) = warp_with_grid(x, &plan.grid)?;
    let mask = match &plan.mask {
        Some(m) => m.clone(),
        None => generate_mask(&warped, Some(&warp), plan.mode)?,
    };
    let out = apply_color_additive(&warped, &plan.sigma_hat, &mask, &plan.delta)?;
    Ok((
        out,
        AcavpTape {
            plan: Arc::clone(plan),
            warp,
            warped,
            mask,
        },
    ))
}

/// Forward without a tape, for inference. Matches [`acavp_forward_planned`]
/// bit for bit.
pub fn acavp_apply_planned(x: &Image, plan: &Arc<AcavpPlan>) -> Result<Image> {
    let Some(mask) = &plan.mask else {
        // the zero-test mask needs the whole warped image first
        return acavp_forward_planned(x, plan).map(|(o, _)| o);
    };
    x.check_shape(&plan.delta)?;
    let n = x.plane_len();
    let (src, sig, delta, m) = (x.data(), plan.sigma_hat.data(), plan.delta.data(), mask.data());
    let mut out = vec![0.0f32; CHANNELS * n];
    for i in 0..n {
        for (c, v) in plan.grid.interpolate(src, i).into_iter().enumerate() {
            let j = c * n + i;
            out[j] = if m[i] == 1 { v * sig[j] + delta[j] } else { v * sig[j] };
        }
    }
    Ok(Image::from_parts(x.height(), x.width(), out))
}

/// Parameter gradients, plus the input-pixel gradient when `input_grad` is set.
pub fn acavp_backward_with(tape: &AcavpTape, grad: &Image, input_grad: bool) -> Result<(PromptGrads, Option<Image>)> {
    if !grad.same_shape(&tape.warped) {
        return Err(Error::TapeMismatch(format!(
            "tape is {}, gradient is {}",
            tape.warped.shape_string(),
            grad.shape_string()
        )));
    }
    let plan = &tape.plan;
    let ca = color_additive_backward(grad, &tape.warped, &plan.sigma_hat, &tape.mask, &plan.sigma_jac)?;
    let gm = warp_backward_matrix(&tape.warp, &ca.warped)?;
    let affine = matrix_grad_to_raw(&gm, &plan.constrained, &plan.squash).map(|v| v as f32);
    let gx = if input_grad {
        Some(warp_backward_image(&tape.warp, &ca.warped)?)
    } else {
        None
    };
    Ok((
        PromptGrads {
            affine: affine.to_vec(),
            color: ca.sigma_raw.into_data(),
            additive: ca.delta.into_data(),
        },
        gx,
    ))
}

pub fn acavp_backward(tape: &AcavpTape, grad: &Image) -> Result<(PromptGrads, Image)> {
    let (g, gx) = acavp_backward_with(tape, grad, true)?;
    Ok((g, gx.expect("input gradient requested")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineVariant {
    /// Additive prompt on a fixed frame of width `pad`.
    VpPadding { pad: usize },
    /// Additive prompt over the whole canvas.
    VpFull,
    /// Fixed centered resize by `scale`, additive prompt on the emptied border.
    Evp { scale: f32 },
    /// Like EVP, but the scale is `sigmoid(scale_raw)` and learnable.
    AutoVp { scale_raw: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub variant: BaselineVariant,
    pub delta: Image,
    pub mask_mode: MaskMode,
}

impl BaselineConfig {
    pub fn new(variant: BaselineVariant, h: usize, w: usize) -> Self {
        Self {
            variant,
            delta: Image::zeros(h, w),
            mask_mode: MaskMode::Geometric,
        }
    }

    /// Resize factor for the resize-based variants.
    pub fn scale(&self) -> Option<f32> {
        match self.variant {
            BaselineVariant::Evp { scale } => Some(scale),
            BaselineVariant::AutoVp { scale_raw } => Some(sigmoid(scale_raw as f64) as f32),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.delta.height(), self.delta.width());
        match self.variant {
            BaselineVariant::VpPadding { pad } if 2 * pad >= h.min(w) => Err(Error::InvalidConfig(format!(
                "pad width {pad} must be below half of {}",
                h.min(w)
            ))),
            BaselineVariant::Evp { scale } if !(scale > 0.0 && scale < 1.0) => {
                Err(Error::ScaleOutOfRange(scale as f64))
            }
            BaselineVariant::AutoVp { scale_raw } if !scale_raw.is_finite() => {
                Err(Error::NonFiniteInput("AutoVP scale"))
            }
            _ => Ok(()),
        }
    }
}

/// Border width scaled from the 28 px / 224 px reference.
pub fn default_pad(h: usize, w: usize) -> usize {
    ((h.min(w) * VP_PAD_224) as f64 / 224.0).round().max(1.0) as usize
}

#[derive(Debug, Clone)]
pub struct BaselineTape {
    mask: Mask,
    resize: Option<(f64, WarpTape)>,
}

impl BaselineTape {
    pub fn mask(&self) -> &Mask {
        &self.mask
    }
}

/// Image-independent part of a baseline forward.
#[derive(Debug, Clone)]
pub struct BaselinePlan {
    mask: Option<Mask>,
    resize: Option<(f64, Arc<WarpGrid>)>,
}

impl BaselinePlan {
    pub fn new(cfg: &BaselineConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = (cfg.delta.height(), cfg.delta.width());
        Ok(match cfg.variant {
            BaselineVariant::VpPadding { pad } => Self {
                mask: Some(Mask::border(h, w, pad)),
                resize: None,
            },
            BaselineVariant::VpFull => Self {
                mask: Some(Mask::ones(h, w)),
                resize: None,
            },
            BaselineVariant::Evp { .. } | BaselineVariant::AutoVp { .. } => {
                let s = cfg.scale().expect("resize variant") as f64;
                let grid = Arc::new(warp_grid(h, w, &AffineMatrix::scaling(s))?);
                let mask = match cfg.mask_mode {
                    MaskMode::Geometric => Some(Mask::from_bools(h, w, grid.in_bounds().iter().map(|&b| !b))),
                    MaskMode::ZeroTest => None,
                };
                Self {
                    mask,
                    resize: Some((s, grid)),
                }
            }
        })
    }
}

fn add_masked(x: &Image, mask: &Mask, delta: &Image) -> Result<Image> {
    x.check_shape(delta)?;
    let n = x.plane_len();
    let m = mask.data();
    let mut data = x.data().to_vec();
    for (op, dp) in data.chunks_mut(n).zip(delta.data().chunks(n)) {
        for ((o, &d), &k) in op.iter_mut().zip(dp).zip(m) {
            if k == 1 {
                *o += d;
            }
        }
    }
    Ok(Image::from_parts(x.height(), x.width(), data))
}

/// Forward without a tape, for inference. Matches [`baseline_forward_planned`]
/// bit for bit.
pub fn baseline_apply_planned(x: &Image, cfg: &BaselineConfig, plan: &BaselinePlan) -> Result<Image> {
    match (&plan.resize, &plan.mask) {
        (None, Some(mask)) => {
            x.check_shape(&cfg.delta)?;
            add_masked(x, mask, &cfg.delta)
        }
        (Some((_, grid)), Some(mask)) => {
            x.check_shape(&cfg.delta)?;
            let n = x.plane_len();
            let (src, delta, m) = (x.data(), cfg.delta.data(), mask.data());
            let mut out = vec![0.0f32; CHANNELS * n];
            for i in 0..n {
                for (c, v) in grid.interpolate(src, i).into_iter().enumerate() {
                    let j = c * n + i;
                    out[j] = if m[i] == 1 { v + delta[j] } else { v };
                }
            }
            Ok(Image::from_parts(x.height(), x.width(), out))
        }
        _ => baseline_forward_planned(x, cfg, plan).map(|(o, _)| o),
    }
}

pub fn baseline_forward(x: &Image, cfg: &BaselineConfig) -> Result<(Image, BaselineTape)> {
    baseline_forward_planned(x, cfg, &BaselinePlan::new(cfg)?)
}

pub fn baseline_forward_planned(x: &Image, cfg: &BaselineConfig, plan: &BaselinePlan) -> Result<(Image, BaselineTape)> {
    x.check_shape(&cfg.delta)?;
    match &plan.resize {
        None => {
            let mask = plan.mask.clone().expect("fixed mask without resize");
            let out = add_masked(x, &mask, &cfg.delta)?;
            Ok((out, BaselineTape { mask, resize: None }))
        }
        Some((s, grid)) => {
            let (warped, tape) = warp_with_grid(x, grid)?;
            let mask = match &plan.mask {
                Some(m) => m.clone(),
                None => generate_mask(&warped, Some(&tape), cfg.mask_mode)?,
            };
            let out = add_masked(&warped, &mask, &cfg.delta)?;
            Ok((
                out,
                BaselineTape {
                    mask,
                    resize: Some((*s, tape)),
                },
            ))
        }
    }
}

pub fn baseline_backward(
    cfg: &BaselineConfig,
    tape: &BaselineTape,
    grad: &Image,
    input_grad: bool,
) -> Result<(PromptGrads, Option<Image>)> {
    if grad.height() != tape.mask.height() || grad.width() != tape.mask.width() {
        return Err(Error::TapeMismatch(format!(
            "tape is {}x{}, gradient is {}",
            tape.mask.height(),
            tape.mask.width(),
            grad.shape_string()
        )));
    }
    let additive = tape.mask.select(grad.data());
    let mut affine = Vec::new();
    let mut gx = None;
    match &tape.resize {
        None => {
            if input_grad {
                gx = Some(grad.clone());
            }
        }
        Some((s, warp)) => {
            if let BaselineVariant::AutoVp { .. } = cfg.variant {
                let gm = warp_backward_matrix(warp, grad)?;
                affine.push(((gm[0] + gm[4]) * s * (1.0 - s)) as f32);
            }
            if input_grad {
                gx = Some(warp_backward_image(warp, grad)?);
            }
        }
    }
    Ok((
        PromptGrads {
            affine,
            color: Vec::new(),
            additive,
        },
        gx,
    ))
}

/// Full-chain parameters reproducing an EVP transform: pure scaling by the
/// EVP factor, σ̂ = 1, and the same additive pattern.
pub fn embed_evp_as_acavp(evp: &BaselineConfig, r_sigma: f32) -> Result<PromptParams> {
    match evp.variant {
        BaselineVariant::Evp { scale } => embed_scale(scale as f64, evp, r_sigma),
        _ => Err(Error::InvalidConfig("expected an EVP configuration".into())),
    }
}

pub fn embed_autovp_as_acavp(autovp: &BaselineConfig, r_sigma: f32) -> Result<PromptParams> {
    match autovp.variant {
        BaselineVariant::AutoVp { .. } => embed_scale(autovp.scale().expect("resize variant") as f64, autovp, r_sigma),
        _ => Err(Error::InvalidConfig("expected an AutoVP configuration".into())),
    }
}

fn embed_scale(scale: f64, cfg: &BaselineConfig, r_sigma: f32) -> Result<PromptParams> {
    if !(scale > 0.0 && scale < 1.0) {
        return Err(Error::ScaleOutOfRange(scale));
    }
    let (h, w) = (cfg.delta.height(), cfg.delta.width());
    let mut affine = AffineRaw::default();
    affine.0[AffineRaw::SX] = logit(scale) as f32;
    affine.0[AffineRaw::SY] = affine.0[AffineRaw::SX];
    Ok(PromptParams {
        affine,
        ranges: AffineRanges::default(),
        color: ColorPrompt::identity(h, w, r_sigma),
        additive: AdditivePrompt {
            delta: cfg.delta.clone(),
        },
    })
}

/// Prompting method used by the trainer and evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Acavp,
    Vp,
    VpFull,
    Evp,
    AutoVp,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Acavp, Variant::Vp, Variant::VpFull, Variant::Evp, Variant::AutoVp];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Acavp => "acavp",
            Variant::Vp => "vp",
            Variant::VpFull => "vp-full",
            Variant::Evp => "evp",
            Variant::AutoVp => "autovp",
        }
    }

    fn code(&self) -> f32 {
        match self {
            Variant::Acavp => 0.0,
            Variant::Vp => 1.0,
            Variant::VpFull => 2.0,
            Variant::Evp => 3.0,
            Variant::AutoVp => 4.0,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stages {
    pub warped: Image,
    pub mask: Mask,
    pub output: Image,
}

/// A trainable prompt of any variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Prompt {
    Acavp { params: PromptParams, mask_mode: MaskMode },
    Baseline(BaselineConfig),
}

#[derive(Debug, Clone)]
pub enum PromptTape {
    Acavp(AcavpTape),
    Baseline(BaselineTape),
}

/// A prompt with its image-independent work done, ready to run over a batch.
#[derive(Debug, Clone)]
pub enum PreparedPrompt<'a> {
    Acavp(Arc<AcavpPlan>),
    Baseline(&'a BaselineConfig, BaselinePlan),
}

impl PreparedPrompt<'_> {
    pub fn forward(&self, x: &Image) -> Result<(Image, PromptTape)> {
        match self {
            PreparedPrompt::Acavp(plan) => acavp_forward_planned(x, plan).map(|(o, t)| (o, PromptTape::Acavp(t))),
            PreparedPrompt::Baseline(cfg, plan) => {
                baseline_forward_planned(x, cfg, plan).map(|(o, t)| (o, PromptTape::Baseline(t)))
            }
        }
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        match self {
            PreparedPrompt::Acavp(plan) => acavp_apply_planned(x, plan),
            PreparedPrompt::Baseline(cfg, plan) => baseline_apply_planned(x, cfg, plan),
        }
    }

    pub fn backward(&self, tape: &PromptTape, grad: &Image, input_grad: bool) -> Result<(PromptGrads, Option<Image>)> {
        match (self, tape) {
            (PreparedPrompt::Acavp(_), PromptTape::Acavp(t)) => acavp_backward_with(t, grad, input_grad),
            (PreparedPrompt::Baseline(b, _), PromptTape::Baseline(t)) => baseline_backward(b, t, grad, input_grad),
            _ => Err(Error::TapeMismatch("tape belongs to a different prompt variant".into())),
        }
    }
}

/// Knobs used to build a freshly initialised prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptInit {
    pub ranges: AffineRanges,
    pub r_sigma: f32,
    pub mask_mode: MaskMode,
    /// Padding width for [`Variant::Vp`]; `None` scales the 224-px default.
    pub pad: Option<usize>,
    pub evp_scale: f32,
}

impl Default for PromptInit {
    fn default() -> Self {
        Self {
            ranges: AffineRanges::default(),
            r_sigma: crate::color::DEFAULT_R_SIGMA,
            mask_mode: MaskMode::Geometric,
            pad: None,
            evp_scale: INIT_SCALE as f32,
        }
    }
}

impl Prompt {
    pub fn init(variant: Variant, h: usize, w: usize, cfg: &PromptInit) -> Self {
        let baseline = |v| {
            let mut b = BaselineConfig::new(v, h, w);
            b.mask_mode = cfg.mask_mode;
            Prompt::Baseline(b)
        };
        match variant {
            Variant::Acavp => Prompt::Acavp {
                params: init_params(h, w, cfg.ranges, cfg.r_sigma),
                mask_mode: cfg.mask_mode,
            },
            Variant::Vp => baseline(BaselineVariant::VpPadding {
                pad: cfg.pad.unwrap_or_else(|| default_pad(h, w)),
            }),
            Variant::VpFull => baseline(BaselineVariant::VpFull),
            Variant::Evp => baseline(BaselineVariant::Evp { scale: cfg.evp_scale }),
            Variant::AutoVp => baseline(BaselineVariant::AutoVp {
                scale_raw: logit(cfg.evp_scale as f64) as f32,
            }),
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            Prompt::Acavp { .. } => Variant::Acavp,
            Prompt::Baseline(b) => match b.variant {
                BaselineVariant::VpPadding { .. } => Variant::Vp,
                BaselineVariant::VpFull => Variant::VpFull,
                BaselineVariant::Evp { .. } => Variant::Evp,
                BaselineVariant::AutoVp { .. } => Variant::AutoVp,
            },
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Prompt::Acavp { params, .. } => params.height(),
            Prompt::Baseline(b) => b.delta.height(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Prompt::Acavp { params, .. } => params.width(),
            Prompt::Baseline(b) => b.delta.width(),
        }
    }

    /// Precomputes everything that does not depend on the input image.
    pub fn prepare(&self) -> Result<PreparedPrompt<'_>> {
        Ok(match self {
            Prompt::Acavp { params, mask_mode } => PreparedPrompt::Acavp(Arc::new(AcavpPlan::new(params, *mask_mode)?)),
            Prompt::Baseline(b) => PreparedPrompt::Baseline(b, BaselinePlan::new(b)?),
        })
    }

    pub fn forward(&self, x: &Image) -> Result<(Image, PromptTape)> {
        self.prepare()?.forward(x)
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.prepare()?.apply(x)
    }

    pub fn backward(&self, tape: &PromptTape, grad: &Image, input_grad: bool) -> Result<(PromptGrads, Option<Image>)> {
        match (self, tape) {
            (Prompt::Acavp { .. }, PromptTape::Acavp(t)) => acavp_backward_with(t, grad, input_grad),
            (Prompt::Baseline(b), PromptTape::Baseline(t)) => baseline_backward(b, t, grad, input_grad),
            _ => Err(Error::TapeMismatch("tape belongs to a different prompt variant".into())),
        }
    }

    /// Intermediate images of one forward: the geometric stage alone, the
    /// additive mask, and the final prompted image.
    pub fn stages(&self, x: &Image) -> Result<Stages> {
        let (output, tape) = self.forward(x)?;
        let (warped, mask) = match (self, tape) {
            (_, PromptTape::Acavp(t)) => (t.warped().clone(), t.mask().clone()),
            (Prompt::Baseline(b), PromptTape::Baseline(t)) => {
                let bare = BaselineConfig {
                    delta: Image::zeros(b.delta.height(), b.delta.width()),
                    ..b.clone()
                };
                (baseline_forward(x, &bare)?.0, t.mask().clone())
            }
            _ => unreachable!("forward returns the tape of its own variant"),
        };
        Ok(Stages { warped, mask, output })
    }

    /// Learnable parameters as `[affine, colour, additive]` slices.
    pub fn groups(&self) -> [&[f32]; 3] {
        match self {
            Prompt::Acavp { params, .. } => [
                &params.affine.0,
                params.color.sigma.data(),
                params.additive.delta.data(),
            ],
            Prompt::Baseline(b) => {
                let affine: &[f32] = match &b.variant {
                    BaselineVariant::AutoVp { scale_raw } => std::slice::from_ref(scale_raw),
                    _ => &[],
                };
                [affine, &[], b.delta.data()]
            }
        }
    }

    pub fn groups_mut(&mut self) -> [&mut [f32]; 3] {
        match self {
            Prompt::Acavp { params, .. } => [
                &mut params.affine.0,
                params.color.sigma.data_mut(),
                params.additive.delta.data_mut(),
            ],
            Prompt::Baseline(b) => {
                let affine: &mut [f32] = match &mut b.variant {
                    BaselineVariant::AutoVp { scale_raw } => std::slice::from_mut(scale_raw),
                    _ => &mut [],
                };
                [affine, &mut [], b.delta.data_mut()]
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn to_entries(&self) -> Vec<TensorEntry> {
        let mut entries = vec![TensorEntry::scalar("prompt.variant", self.variant().code())];
        match self {
            Prompt::Acavp { params, mask_mode } => {
                entries.push(TensorEntry::scalar("prompt.mask_mode", mask_code(*mask_mode)));
                entries.extend(params.to_entries());
            }
            Prompt::Baseline(b) => {
                entries.push(TensorEntry::scalar("prompt.mask_mode", mask_code(b.mask_mode)));
                let knob = match b.variant {
                    BaselineVariant::VpPadding { pad } => pad as f32,
                    BaselineVariant::VpFull => 0.0,
                    BaselineVariant::Evp { scale } => scale,
                    BaselineVariant::AutoVp { scale_raw } => scale_raw,
                };
                entries.push(TensorEntry::scalar("baseline.param", knob));
                let (h, w) = (b.delta.height(), b.delta.width());
                entries.push(TensorEntry::new("additive.delta", vec![3, h, w], b.delta.data().to_vec()));
            }
        }
        entries
    }

    pub fn from_entries(entries: &[TensorEntry]) -> Result<Self> {
        let code = match find(entries, "prompt.variant", Some(1)) {
            Ok(e) => e.data[0],
            Err(Error::MissingEntry(_)) => 0.0,
            Err(e) => return Err(e),
        };
        let mask_mode = match find(entries, "prompt.mask_mode", Some(1)) {
            Ok(e) if e.data[0] == 1.0 => MaskMode::ZeroTest,
            _ => MaskMode::Geometric,
        };
        let variant = Variant::ALL
            .into_iter()
            .find(|v| v.code() == code)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown prompt variant code {code}")))?;
        if variant == Variant::Acavp {
            return Ok(Prompt::Acavp {
                params: PromptParams::from_entries(entries)?,
                mask_mode,
            });
        }
        let knob = find(entries, "baseline.param", Some(1))?.data[0];
        let delta_entry = find(entries, "additive.delta", None)?;
        let (h, w) = plane_dims(delta_entry)?;
        let variant = match variant {
            Variant::Vp => BaselineVariant::VpPadding { pad: knob as usize },
            Variant::VpFull => BaselineVariant::VpFull,
            Variant::Evp => BaselineVariant::Evp { scale: knob },
            _ => BaselineVariant::AutoVp { scale_raw: knob },
        };
        let cfg = BaselineConfig {
            variant,
            delta: image_entry(delta_entry, h, w)?,
            mask_mode,
        };
        cfg.validate()?;
        Ok(Prompt::Baseline(cfg))
    }
}

fn mask_code(m: MaskMode) -> f32 {
    match m {
        MaskMode::Geometric => 0.0,
        MaskMode::ZeroTest => 1.0,
    }
}
