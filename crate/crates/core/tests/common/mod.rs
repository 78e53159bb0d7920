//! Independent f64 reference implementations used as finite-difference
//! oracles. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use promptforge::rng::{Rng, RngStream};
use promptforge::Image;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Raw prompt parameters in f64.
#[derive(Debug, Clone)]
pub struct RefPrompt {
    pub h: usize,
    pub w: usize,
    /// `[t_x, t_y, theta, s_x, s_y, sh_x, sh_y]`
    pub affine: [f64; 7],
    /// `(R_t, R_theta, R_sh)`
    pub ranges: (f64, f64, f64),
    pub sigma: Vec<f64>,
    pub r_sigma: f64,
    pub delta: Vec<f64>,
}

/// Per-pixel facts about where a warp sample landed, used to detect
/// non-smooth points of the bilinear warp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpSignature {
    pub cells: Vec<(i64, i64, bool)>,
}

/// Reference forward: affine warp (inverse map, bilinear, zero outside),
/// colour multiply, additive prompt on the out-of-bounds mask.
pub fn ref_forward(x: &[f64], p: &RefPrompt) -> (Vec<f64>, WarpSignature) {
    let (h, w) = (p.h, p.w);
    let n = h * w;
    let a = &p.affine;
    let (rt, rth, rsh) = p.ranges;
    let tx = a[0].tanh() * rt;
    let ty = a[1].tanh() * rt;
    let th = a[2].tanh() * rth;
    let sx = sigmoid(a[3]);
    let sy = sigmoid(a[4]);
    let shx = a[5].tanh() * rsh;
    let shy = a[6].tanh() * rsh;
    let (sin, cos) = th.sin_cos();
    let m00 = sx * cos + shx * sin;
    let m01 = -sx * sin + shx * cos;
    let m10 = sy * sin + shy * cos;
    let m11 = sy * cos + shy * sin;
    let det = m00 * m11 - m01 * m10;
    let (i00, i01, i10, i11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);

    let mut out = vec![0.0; 3 * n];
    let mut cells = Vec::with_capacity(n);
    for yy in 0..h {
        for xx in 0..w {
            let ud = (xx as f64 - cx) / hw - tx;
            let vd = (yy as f64 - cy) / hh - ty;
            let px = (i00 * ud + i01 * vd) * hw + cx;
            let py = (i10 * ud + i11 * vd) * hh + cy;
            let inside = px >= 0.0 && py >= 0.0 && px <= (w - 1) as f64 && py <= (h - 1) as f64;
            let x0 = (px.floor() as i64).clamp(0, w as i64 - 2);
            let y0 = (py.floor() as i64).clamp(0, h as i64 - 2);
            cells.push((x0, y0, inside));
            let i = yy * w + xx;
            for c in 0..3 {
                let warped = if inside {
                    let (fx, fy) = (px - x0 as f64, py - y0 as f64);
                    let at = |yy: i64, xx: i64| x[c * n + yy as usize * w + xx as usize];
                    (1.0 - fx) * (1.0 - fy) * at(y0, x0)
                        + fx * (1.0 - fy) * at(y0, x0 + 1)
                        + (1.0 - fx) * fy * at(y0 + 1, x0)
                        + fx * fy * at(y0 + 1, x0 + 1)
                } else {
                    0.0
                };
                let s = p.r_sigma * sigmoid(p.sigma[c * n + i]);
                let d = if inside { 0.0 } else { p.delta[c * n + i] };
                out[c * n + i] = warped * s + d;
            }
        }
    }
    (out, WarpSignature { cells })
}

/// Smooth scalar loss `Σ r·y + ½ Σ y²` and its gradient.
pub fn quad_loss(y: &[f64], r: &[f64]) -> f64 {
    y.iter().zip(r).map(|(a, b)| a * b + 0.5 * a * a).sum()
}

pub fn quad_loss_grad(y: &[f64], r: &[f64]) -> Vec<f64> {
    y.iter().zip(r).map(|(a, b)| b + a).collect()
}

pub fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-6)
}

/// Central difference of `f` at step `h`.
pub fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Central difference that shrinks the step (down to 1e-7) while the
/// bracket `[-h, h]` crosses a change in `signature`; returns the step used.
pub fn central_kink_aware<S: PartialEq>(
    f: impl Fn(f64) -> f64,
    signature: impl Fn(f64) -> S,
    h0: f64,
) -> (f64, f64) {
    let mut h = h0;
    while h > 1e-7 && signature(h) != signature(-h) {
        h /= 10.0;
    }
    (central(&f, h), h)
}

pub fn random_image(h: usize, w: usize, rng: RngStream) -> Image {
    let mut r = rng.rng();
    Image::from_fn(h, w, |_, _, _| r.random::<f32>())
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// f64 reference of the frozen classifier: two 3x3 stride-2 pad-1 convs with
/// ReLU, global average pool, linear head. Returns logits and the sign
/// pattern of every ReLU pre-activation.
pub struct RefModel {
    pub k: usize,
    pub c1w: Vec<f64>,
    pub c1b: Vec<f64>,
    pub c2w: Vec<f64>,
    pub c2b: Vec<f64>,
    pub fcw: Vec<f64>,
    pub fcb: Vec<f64>,
}

fn conv_ref(x: &[f64], ch: usize, h: usize, w: usize, wt: &[f64], b: &[f64]) -> (Vec<f64>, usize, usize) {
    let oc = b.len();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = b[o];
                for c in 0..ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as i64 - 1;
                            let ix = (ox * 2 + kx) as i64 - 1;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            s += wt[((o * ch + c) * 3 + ky) * 3 + kx] * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    (out, oh, ow)
}

impl RefModel {
    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<bool>) {
        let c1 = self.c1b.len();
        let c2 = self.c2b.len();
        let (z1, h1, w1) = conv_ref(x, 3, h, w, &self.c1w, &self.c1b);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let (z2, h2, w2) = conv_ref(&a1, c1, h1, w1, &self.c2w, &self.c2b);
        let np = h2 * w2;
        let feats: Vec<f64> = (0..c2)
            .map(|o| z2[o * np..(o + 1) * np].iter().map(|v| v.max(0.0)).sum::<f64>() / np as f64)
            .collect();
        let logits = (0..self.k)
            .map(|c| self.fcb[c] + (0..c2).map(|f| self.fcw[c * c2 + f] * feats[f]).sum::<f64>())
            .collect();
        let gates = z1.iter().chain(&z2).map(|&v| v > 0.0).collect();
        (logits, gates)
    }
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

use promptforge::affine::{AffineRanges, AffineRaw};
use promptforge::color::{AdditivePrompt, ColorPrompt, MaskMode};
use promptforge::pipeline::{acavp_backward, acavp_forward, PromptParams};

/// Random raw parameters spread over the interesting part of each range.
pub fn random_params(h: usize, w: usize, rng: RngStream) -> PromptParams {
    let mut r = rng.rng();
    let mut raw = AffineRaw::default();
    raw.0[AffineRaw::TX] = r.random_range(-1.0..1.0);
    raw.0[AffineRaw::TY] = r.random_range(-1.0..1.0);
    raw.0[AffineRaw::THETA] = r.random_range(-1.0..1.0);
    raw.0[AffineRaw::SX] = r.random_range(0.0..3.0);
    raw.0[AffineRaw::SY] = r.random_range(0.0..3.0);
    raw.0[AffineRaw::SHX] = r.random_range(-1.0..1.0);
    raw.0[AffineRaw::SHY] = r.random_range(-1.0..1.0);
    let r_sigma = 6.0;
    PromptParams {
        affine: raw,
        ranges: AffineRanges::default(),
        color: ColorPrompt {
            sigma: Image::from_fn(h, w, |_, _, _| r.random_range(-3.0..0.5)),
            r_sigma,
        },
        additive: AdditivePrompt {
            delta: Image::from_fn(h, w, |_, _, _| r.random_range(-0.5..0.5)),
        },
    }
}

pub fn ref_prompt(p: &PromptParams) -> RefPrompt {
    RefPrompt {
        h: p.height(),
        w: p.width(),
        affine: p.affine.0.map(|v| v as f64),
        ranges: (p.ranges.r_t as f64, p.ranges.r_theta as f64, p.ranges.r_sh as f64),
        sigma: to_f64(p.color.sigma.data()),
        r_sigma: p.color.r_sigma as f64,
        delta: to_f64(p.additive.delta.data()),
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub affine: f64,
    pub sigma: f64,
    pub delta: f64,
    pub input: f64,
    /// Affine checks that needed a step below 1e-3 to avoid a kink.
    pub shrunk: usize,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.affine.max(self.sigma).max(self.delta).max(self.input)
    }
}

/// Compares analytic prompt gradients with central differences of the
/// reference forward for one seeded instance (3 x `side` x `side`).
pub fn prompt_gradient_check(seed: u64, side: usize, samples: usize) -> GradCheck {
    let base = RngStream::new(seed).derive("gradcheck");
    let x = random_image(side, side, base.derive("x"));
    let params = random_params(side, side, base.derive("params"));
    let n = 3 * side * side;
    let mut r = base.derive("proj").rng();
    let proj: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();

    let (y, tape) = acavp_forward(&x, &params, MaskMode::Geometric).unwrap();
    let g = quad_loss_grad(&to_f64(y.data()), &proj);
    let g_img = Image::new(side, side, g.iter().map(|&v| v as f32).collect()).unwrap();
    let (grads, gx) = acavp_backward(&tape, &g_img).unwrap();

    let rp = ref_prompt(&params);
    let xr = to_f64(x.data());
    let loss = |p: &RefPrompt, x: &[f64]| quad_loss(&ref_forward(x, p).0, &proj);
    let mut out = GradCheck::default();
    let h = 1e-3;

    for k in 0..7 {
        let with = |e: f64| {
            let mut p = rp.clone();
            p.affine[k] += e;
            p
        };
        let (fd, used) = central_kink_aware(|e| loss(&with(e), &xr), |e| ref_forward(&xr, &with(e)).1, h);
        if used < h {
            out.shrunk += 1;
        }
        out.affine = out.affine.max(rel_err(grads.affine[k] as f64, fd));
    }
    let mut pick = base.derive("pick").rng();
    for _ in 0..samples {
        let i = pick.random_range(0..n);
        let fd = central(
            |e| {
                let mut p = rp.clone();
                p.sigma[i] += e;
                loss(&p, &xr)
            },
            h,
        );
        out.sigma = out.sigma.max(rel_err(grads.color[i] as f64, fd));
        let i = pick.random_range(0..n);
        let fd = central(
            |e| {
                let mut p = rp.clone();
                p.delta[i] += e;
                loss(&p, &xr)
            },
            h,
        );
        out.delta = out.delta.max(rel_err(grads.additive[i] as f64, fd));
        let i = pick.random_range(0..n);
        let fd = central(
            |e| {
                let mut xx = xr.clone();
                xx[i] += e;
                loss(&rp, &xx)
            },
            h,
        );
        out.input = out.input.max(rel_err(gx.data()[i] as f64, fd));
    }
    out
}

pub fn ref_model(m: &promptforge::model::FrozenModel) -> RefModel {
    let w = m.weights();
    RefModel {
        k: m.num_classes(),
        c1w: to_f64(&w.conv1_w),
        c1b: to_f64(&w.conv1_b),
        c2w: to_f64(&w.conv2_w),
        c2b: to_f64(&w.conv2_b),
        fcw: to_f64(&w.fc_w),
        fcb: to_f64(&w.fc_b),
    }
}
