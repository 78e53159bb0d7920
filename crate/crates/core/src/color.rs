//! Multiplicative colour prompt, dynamic mask, masked additive prompt.

use crate::affine::WarpTape;
use crate::error::{Error, Result};
use crate::image::{Image, Mask, CHANNELS};

pub const DEFAULT_R_SIGMA: f32 = 6.0;

/// Raw per-pixel colour field and its magnitude cap.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorPrompt {
    pub sigma: Image,
    pub r_sigma: f32,
}

impl ColorPrompt {
    /// Field whose constrained value is exactly `1/R_σ · R_σ`, i.e. a no-op.
    pub fn identity(height: usize, width: usize, r_sigma: f32) -> Self {
        let raw = crate::affine::logit(1.0 / r_sigma as f64) as f32;
        Self {
            sigma: Image::filled(height, width, raw),
            r_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdditivePrompt {
    pub delta: Image,
}

impl AdditivePrompt {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            delta: Image::zeros(height, width),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Mask is the set of destination pixels whose sample fell outside the source.
    #[default]
    Geometric,
    /// Mask is the set of pixels where all three channels are exactly zero.
    ZeroTest,
}

impl MaskMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Geometric => "geometric",
            Self::ZeroTest => "zero-test",
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Self::Geometric),
            "zero-test" => Ok(Self::ZeroTest),
            other => Err(Error::InvalidConfig(format!("unknown mask mode `{other}`"))),
        }
    }
}

/// Returns `(σ̂, dσ̂/dσ)`, both 3×H×W.
pub fn constrain_color(p: &ColorPrompt) -> Result<(Image, Image)> {
    if !p.r_sigma.is_finite() || p.r_sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!("R_sigma must be positive, got {}", p.r_sigma)));
    }
    if !p.sigma.is_finite() {
        return Err(Error::NonFiniteInput("colour prompt"));
    }
    let r = p.r_sigma;
    let cap = r.next_down();
    let n = p.sigma.data().len();
    let mut hat = Vec::with_capacity(n);
    let mut jac = Vec::with_capacity(n);
    for &v in p.sigma.data() {
        // s and 1 - s both come straight from exp, so neither loses precision at saturation
        let e = (-v.abs()).exp();
        let (big, small) = (1.0 / (1.0 + e), e / (1.0 + e));
        let (s, one_minus) = if v >= 0.0 { (big, small) } else { (small, big) };
        hat.push((s * r).clamp(f32::MIN_POSITIVE, cap));
        jac.push(r * s * one_minus);
    }
    let (h, w) = (p.sigma.height(), p.sigma.width());
    Ok((Image::new(h, w, hat)?, Image::new(h, w, jac)?))
}

pub fn generate_mask(warped: &Image, tape: Option<&WarpTape>, mode: MaskMode) -> Result<Mask> {
    let (h, w) = (warped.height(), warped.width());
    match mode {
        MaskMode::Geometric => {
            let tape = tape.ok_or_else(|| Error::TapeMismatch("geometric mask needs a warp tape".into()))?;
            if tape.height() != h || tape.width() != w {
                return Err(Error::TapeMismatch(format!(
                    "tape is {}x{}, image is {}",
                    tape.height(),
                    tape.width(),
                    warped.shape_string()
                )));
            }
            Ok(Mask::from_bools(h, w, tape.in_bounds().iter().map(|&b| !b)))
        }
        MaskMode::ZeroTest => {
            let n = h * w;
            let d = warped.data();
            Ok(Mask::from_bools(
                h,
                w,
                (0..n).map(|i| d[i] == 0.0 && d[n + i] == 0.0 && d[2 * n + i] == 0.0),
            ))
        }
    }
}

fn check_mask(img: &Image, m: &Mask) -> Result<()> {
    if m.height() != img.height() || m.width() != img.width() {
        return Err(Error::shape(
            format!("{}x{} mask", img.height(), img.width()),
            format!("{}x{} mask", m.height(), m.width()),
        ));
    }
    Ok(())
}

/// `out = warped ⊙ σ̂ + M ⊙ δ`.
pub fn apply_color_additive(warped: &Image, sigma_hat: &Image, mask: &Mask, delta: &Image) -> Result<Image> {
    warped.check_shape(sigma_hat)?;
    warped.check_shape(delta)?;
    check_mask(warped, mask)?;
    let n = warped.plane_len();
    let m = mask.data();
    let mut out = Vec::with_capacity(CHANNELS * n);
    for c in 0..CHANNELS {
        let (wp, sp, dp) = (warped.plane(c), sigma_hat.plane(c), delta.plane(c));
        out.extend(
            wp.iter()
                .zip(sp)
                .zip(dp)
                .zip(m)
                .map(|(((&x, &s), &d), &k)| if k == 1 { x * s + d } else { x * s }),
        );
    }
    Ok(Image::from_parts(warped.height(), warped.width(), out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorAdditiveGrads {
    pub warped: Image,
    pub sigma_raw: Image,
    pub delta: Image,
}

pub fn color_additive_backward(
    grad_out: &Image,
    warped: &Image,
    sigma_hat: &Image,
    mask: &Mask,
    sigma_jac: &Image,
) -> Result<ColorAdditiveGrads> {
    for other in [warped, sigma_hat, sigma_jac] {
        grad_out.check_shape(other)?;
    }
    check_mask(grad_out, mask)?;
    let (h, w) = (grad_out.height(), grad_out.width());
    let (g, x, s, j) = (grad_out.data(), warped.data(), sigma_hat.data(), sigma_jac.data());
    let gw = g.iter().zip(s).map(|(a, b)| a * b).collect();
    let gs = (0..g.len()).map(|i| g[i] * x[i] * j[i]).collect();
    let gd = mask.select(g);
    Ok(ColorAdditiveGrads {
        warped: Image::from_parts(h, w, gw),
        sigma_raw: Image::from_parts(h, w, gs),
        delta: Image::from_parts(h, w, gd),
    })
}
