//! Constrained affine prompt: parameter squashing, matrix assembly, inverse
//! mapping bilinear warp, and the analytic backward pass.
//!
//! Coordinates are center-origin and normalized so that each axis spans
//! `[-1, 1]` across the outer pixel edges. The matrix maps source points to
//! destination points; the warp pulls each destination pixel from
//! `A⁻¹ · p`, so scaling and rotation act about the image center and a
//! translation of `1.0` moves content by half the canvas.

use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

/// Minimum `|det|` of the linear block accepted by the warp.
pub const MIN_DET: f64 = 1e-6;

/// Sample coordinates this close to an integer are snapped onto it.
const SNAP_EPS: f64 = 1e-9;

/// Seven unconstrained affine scalars, ordered
/// `[t_x, t_y, theta, s_x, s_y, sh_x, sh_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineRaw(pub [f32; 7]);

impl AffineRaw {
    pub const TX: usize = 0;
    pub const TY: usize = 1;
    pub const THETA: usize = 2;
    pub const SX: usize = 3;
    pub const SY: usize = 4;
    pub const SHX: usize = 5;
    pub const SHY: usize = 6;
    pub const NAMES: [&'static str; 7] = ["t_x", "t_y", "theta", "s_x", "s_y", "sh_x", "sh_y"];

    /// Raw parameters for a pure centered scaling by `scale` in (0, 1).
    pub fn scaling(scale: f64) -> Self {
        let mut raw = Self::default();
        let s = logit(scale) as f32;
        raw.0[Self::SX] = s;
        raw.0[Self::SY] = s;
        raw
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Range caps for translation, rotation and shear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineRanges {
    pub r_t: f32,
    pub r_theta: f32,
    pub r_sh: f32,
}

impl Default for AffineRanges {
    fn default() -> Self {
        Self {
            r_t: 0.05,
            r_theta: 0.1,
            r_sh: 0.1,
        }
    }
}

impl AffineRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f32| v.is_finite() && v > 0.0;
        if ok(self.r_t) && ok(self.r_theta) && ok(self.r_sh) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("affine ranges must be positive: {self:?}")))
        }
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            r_t: self.r_t * factor,
            r_theta: self.r_theta * factor,
            r_sh: self.r_sh * factor,
        }
    }
}

/// Squashed affine parameters, same ordering as [`AffineRaw`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineConstrained {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
    pub sx: f64,
    pub sy: f64,
    pub shx: f64,
    pub shy: f64,
}

impl AffineConstrained {
    pub fn scaling(s: f64) -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            theta: 0.0,
            sx: s,
            sy: s,
            shx: 0.0,
            shy: 0.0,
        }
    }
}

/// Diagonal of `d(constrained) / d(raw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashJacobian(pub [f64; 7]);

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Sigmoid kept strictly inside (0, 1) even when the exact value rounds to
/// an endpoint.
fn open_sigmoid(x: f64) -> f64 {
    sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn constrain_affine(raw: &AffineRaw, ranges: &AffineRanges) -> Result<(AffineConstrained, SquashJacobian)> {
    if !raw.is_finite() {
        return Err(Error::NonFiniteInput("affine parameters"));
    }
    ranges.validate()?;
    let r = raw.0.map(f64::from);
    let bounded = |v: f64, cap: f32| {
        let t = v.tanh();
        (t * cap as f64, cap as f64 * (1.0 - t * t))
    };
    let scale = |v: f64| {
        let s = open_sigmoid(v);
        (s, s * (1.0 - s))
    };
    let (tx, dtx) = bounded(r[0], ranges.r_t);
    let (ty, dty) = bounded(r[1], ranges.r_t);
    let (theta, dth) = bounded(r[2], ranges.r_theta);
    let (sx, dsx) = scale(r[3]);
    let (sy, dsy) = scale(r[4]);
    let (shx, dshx) = bounded(r[5], ranges.r_sh);
    let (shy, dshy) = bounded(r[6], ranges.r_sh);
    Ok((
        AffineConstrained {
            tx,
            ty,
            theta,
            sx,
            sy,
            shx,
            shy,
        },
        SquashJacobian([dtx, dty, dth, dsx, dsy, dshx, dshy]),
    ))
}

/// Homogeneous 3×3 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMatrix(pub [[f64; 3]; 3]);

impl AffineMatrix {
    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn scaling(s: f64) -> Self {
        Self([[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn det2(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

pub fn build_matrix(c: &AffineConstrained) -> AffineMatrix {
    let (sin, cos) = c.theta.sin_cos();
    AffineMatrix([
        [c.sx * cos + c.shx * sin, -c.sx * sin + c.shx * cos, c.tx],
        [c.sy * sin + c.shy * cos, c.sy * cos + c.shy * sin, c.ty],
        [0.0, 0.0, 1.0],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Top-left corner of the bilinear cell.
    pub x0: u32,
    pub y0: u32,
    pub fx: f64,
    pub fy: f64,
}

impl Sample {
    /// Bilinear weights for corners `(x0,y0) (x1,y0) (x0,y1) (x1,y1)`.
    pub fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy]
    }
}

/// Sampling geometry of one warp: where every destination pixel reads from.
/// It depends only on the matrix and canvas size, so one grid can serve a
/// whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGrid {
    height: usize,
    width: usize,
    inverse: [[f64; 2]; 2],
    translation: [f64; 2],
    samples: Vec<Sample>,
    in_bounds: Vec<bool>,
}

impl WarpGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Inverse of the 2×2 linear block.
    pub fn inverse(&self) -> [[f64; 2]; 2] {
        self.inverse
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn in_bounds(&self) -> &[bool] {
        &self.in_bounds
    }

    /// Number of destination pixels whose sample landed inside the source.
    pub fn support(&self) -> usize {
        self.in_bounds.iter().filter(|&&b| b).count()
    }

    /// Bilinear reads of destination pixel `i` from every channel of `src`,
    /// or zeros when its sample fell outside.
    #[inline]
    pub fn interpolate(&self, src: &[f32], i: usize) -> [f32; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        if !self.in_bounds[i] {
            return out;
        }
        let s = &self.samples[i];
        let k = self.corners(s);
        let wts = s.weights();
        let n = self.height * self.width;
        for (c, o) in out.iter_mut().enumerate() {
            let p = &src[c * n..];
            let v = wts[0] * p[k[0]] as f64 + wts[1] * p[k[1]] as f64 + wts[2] * p[k[2]] as f64 + wts[3] * p[k[3]] as f64;
            *o = v as f32;
        }
        out
    }

    #[inline]
    fn corners(&self, s: &Sample) -> [usize; 4] {
        let w = self.width;
        let x0 = s.x0 as usize;
        let y0 = s.y0 as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]
    }
}

/// Everything the backward pass needs from one warp.
#[derive(Debug, Clone)]
pub struct WarpTape {
    grid: Arc<WarpGrid>,
    source: Image,
}

impl Deref for WarpTape {
    type Target = WarpGrid;

    fn deref(&self) -> &WarpGrid {
        &self.grid
    }
}

impl WarpTape {
    pub fn grid(&self) -> &Arc<WarpGrid> {
        &self.grid
    }
}

struct Frame {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
}

impl Frame {
    fn new(h: usize, w: usize) -> Self {
        Self {
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
            half_w: w as f64 / 2.0,
            half_h: h as f64 / 2.0,
        }
    }

    /// Normalized destination abscissa of every column, minus the translation.
    fn columns(&self, w: usize, tx: f64) -> Vec<f64> {
        (0..w).map(|x| (x as f64 - self.cx) / self.half_w - tx).collect()
    }

    fn row(&self, y: usize, ty: f64) -> f64 {
        (y as f64 - self.cy) / self.half_h - ty
    }
}

/// Normalized source location of a translated destination point.
#[inline]
fn to_source(inv: &[[f64; 2]; 2], u_dst: f64, v_dst: f64) -> (f64, f64) {
    (inv[0][0] * u_dst + inv[0][1] * v_dst, inv[1][0] * u_dst + inv[1][1] * v_dst)
}

/// Nearest integer through a cast; `round` is a libm call on targets
/// without a rounding instruction.
fn nearest(v: f64) -> f64 {
    let f = v + 0.5;
    let t = f as i64 as f64;
    if t > f {
        t - 1.0
    } else {
        t
    }
}

fn snap(v: f64) -> f64 {
    let r = nearest(v);
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v
    }
}

/// Warps `img` by `a` with inverse mapping and bilinear sampling.
///
/// Destination pixels whose source location falls outside the pixel-center
/// rectangle `[0, W-1] × [0, H-1]` are set to exactly zero.
pub fn warp_bilinear(img: &Image, a: &AffineMatrix) -> Result<(Image, WarpTape)> {
    let grid = warp_grid(img.height(), img.width(), a)?;
    warp_with_grid(img, &Arc::new(grid))
}

/// Sampling geometry of `a` on an `h × w` canvas.
pub fn warp_grid(h: usize, w: usize, a: &AffineMatrix) -> Result<WarpGrid> {
    let m = &a.0;
    if !m.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteInput("affine matrix"));
    }
    let det = a.det2();
    if det.abs() < MIN_DET {
        return Err(Error::AffineSingular { det });
    }
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let (tx, ty) = (m[0][2], m[1][2]);
    let f = Frame::new(h, w);
    let n = h * w;
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;

    let cols = f.columns(w, tx);
    let mut samples = Vec::with_capacity(n);
    let mut in_bounds = Vec::with_capacity(n);
    for y in 0..h {
        let v_dst = f.row(y, ty);
        for &u_dst in &cols {
            let (u, v) = to_source(&inv, u_dst, v_dst);
            let px = snap(u * f.half_w + f.cx);
            let py = snap(v * f.half_h + f.cy);
            let inside = (0.0..=max_x).contains(&px) && (0.0..=max_y).contains(&py);
            let (x0, fx) = cell(px, w);
            let (y0, fy) = cell(py, h);
            samples.push(Sample { x0, y0, fx, fy });
            in_bounds.push(inside);
        }
    }
    Ok(WarpGrid {
        height: h,
        width: w,
        inverse: inv,
        translation: [tx, ty],
        samples,
        in_bounds,
    })
}

/// Samples `img` through a precomputed grid.
pub fn warp_with_grid(img: &Image, grid: &Arc<WarpGrid>) -> Result<(Image, WarpTape)> {
    if img.height() != grid.height || img.width() != grid.width {
        return Err(Error::shape(format!("{}x{} image", grid.height, grid.width), img.shape_string()));
    }
    let n = grid.height * grid.width;
    let src = img.data();
    let mut out = vec![0.0f32; CHANNELS * n];
    for i in 0..n {
        for (c, v) in grid.interpolate(src, i).into_iter().enumerate() {
            out[c * n + i] = v;
        }
    }
    let out = Image::from_parts(grid.height, grid.width, out);
    Ok((
        out,
        WarpTape {
            grid: Arc::clone(grid),
            source: img.clone(),
        },
    ))
}

/// Splits a pixel coordinate into a cell index and fractional offset. Out of
/// range values are clamped; their pixels are masked out anyway.
fn cell(p: f64, len: usize) -> (u32, f64) {
    if len < 2 {
        return (0, 0.0);
    }
    let p = p.clamp(0.0, (len - 1) as f64);
    // p is non-negative here, so truncation is floor
    let i = (p as usize).min(len - 2);
    (i as u32, p - i as f64)
}

fn check_tape(tape: &WarpTape, grad_out: &Image) -> Result<()> {
    if grad_out.height() != tape.height || grad_out.width() != tape.width {
        return Err(Error::TapeMismatch(format!(
            "tape is {}x{}, gradient is {}",
            tape.height,
            tape.width,
            grad_out.shape_string()
        )));
    }
    Ok(())
}

/// Gradient of the loss w.r.t. the warp input pixels.
pub fn warp_backward_image(tape: &WarpTape, grad_out: &Image) -> Result<Image> {
    check_tape(tape, grad_out)?;
    let mut acc = vec![0.0f64; CHANNELS * tape.height * tape.width];
    let n = tape.height * tape.width;
    for c in 0..CHANNELS {
        let go = grad_out.plane(c);
        let dst = &mut acc[c * n..(c + 1) * n];
        for (i, s) in tape.samples.iter().enumerate() {
            if !tape.in_bounds[i] || go[i] == 0.0 {
                continue;
            }
            let g = go[i] as f64;
            let k = tape.corners(s);
            let wts = s.weights();
            for j in 0..4 {
                dst[k[j]] += g * wts[j];
            }
        }
    }
    Ok(Image::from_parts(tape.height, tape.width, acc.into_iter().map(|v| v as f32).collect()))
}

/// Gradient w.r.t. the six free matrix entries `[a, b, t_x, c, d, t_y]`.
pub fn warp_backward_matrix(tape: &WarpTape, grad_out: &Image) -> Result<[f64; 6]> {
    check_tape(tape, grad_out)?;
    let f = Frame::new(tape.height, tape.width);
    let n = tape.height * tape.width;
    let src = tape.source.data();
    let go = grad_out.data();
    // G = Σ g ⊗ src, gs = Σ g, with g the gradient w.r.t. the normalized source location.
    let mut big_g = [[0.0f64; 2]; 2];
    let mut gs = [0.0f64; 2];
    let cols = f.columns(tape.width, tape.translation[0]);
    for (i, s) in tape.samples.iter().enumerate() {
        if !tape.in_bounds[i] {
            continue;
        }
        let (u, v) = to_source(&tape.inverse, cols[i % tape.width], f.row(i / tape.width, tape.translation[1]));
        let k = tape.corners(s);
        let (fx, fy) = (s.fx, s.fy);
        let mut g_fx = 0.0;
        let mut g_fy = 0.0;
        for c in 0..CHANNELS {
            let g = go[c * n + i] as f64;
            if g == 0.0 {
                continue;
            }
            let p = |j: usize| src[c * n + k[j]] as f64;
            let (p00, p01, p10, p11) = (p(0), p(1), p(2), p(3));
            g_fx += g * ((1.0 - fy) * (p01 - p00) + fy * (p11 - p10));
            g_fy += g * ((1.0 - fx) * (p10 - p00) + fx * (p11 - p01));
        }
        let gu = g_fx * f.half_w;
        let gv = g_fy * f.half_h;
        big_g[0][0] += gu * u;
        big_g[0][1] += gu * v;
        big_g[1][0] += gv * u;
        big_g[1][1] += gv * v;
        gs[0] += gu;
        gs[1] += gv;
    }
    let inv = tape.inverse;
    // -inv^T · G and -inv^T · gs
    let it = |r: usize, c: usize| inv[c][r];
    let mut dl = [[0.0f64; 2]; 2];
    for (r, row) in dl.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = -(it(r, 0) * big_g[0][c] + it(r, 1) * big_g[1][c]);
        }
    }
    let dtx = -(it(0, 0) * gs[0] + it(0, 1) * gs[1]);
    let dty = -(it(1, 0) * gs[0] + it(1, 1) * gs[1]);
    Ok([dl[0][0], dl[0][1], dtx, dl[1][0], dl[1][1], dty])
}

/// Chains matrix-entry gradients through the matrix assembly and the
/// squashing functions down to the raw scalars.
pub fn matrix_grad_to_raw(gm: &[f64; 6], c: &AffineConstrained, jac: &SquashJacobian) -> [f64; 7] {
    let [ga, gb, gtx, gc, gd, gty] = *gm;
    let (sin, cos) = c.theta.sin_cos();
    let da_dth = -c.sx * sin + c.shx * cos;
    let db_dth = -c.sx * cos - c.shx * sin;
    let dc_dth = c.sy * cos - c.shy * sin;
    let dd_dth = -c.sy * sin + c.shy * cos;
    let constrained = [
        gtx,
        gty,
        ga * da_dth + gb * db_dth + gc * dc_dth + gd * dd_dth,
        ga * cos - gb * sin,
        gc * sin + gd * cos,
        ga * sin + gb * cos,
        gc * cos + gd * sin,
    ];
    let mut out = [0.0; 7];
    for i in 0..7 {
        out[i] = constrained[i] * jac.0[i];
    }
    out
}

/// Full affine backward: input-pixel gradient and raw-parameter gradient.
pub fn warp_backward(
    tape: &WarpTape,
    grad_out: &Image,
    c: &AffineConstrained,
    jac: &SquashJacobian,
) -> Result<(Image, AffineRaw)> {
    let grad_img = warp_backward_image(tape, grad_out)?;
    let gm = warp_backward_matrix(tape, grad_out)?;
    let g = matrix_grad_to_raw(&gm, c, jac);
    Ok((grad_img, AffineRaw(g.map(|v| v as f32))))
}
