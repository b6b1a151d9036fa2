//! Shared test support: naive 64-bit reference implementations of every
//! layer, an f64 twin of the full network forward, and finite-difference
//! helpers. Everything here is written as plain loop nests, independent
//! of the production kernels it checks.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use vrae_core::model::{Arch, VraeConfig};
use vrae_core::rng::Rng;
use vrae_core::tensor::Tensor4;

/// Minimal rank-4 f64 array for the reference path.
#[derive(Debug, Clone)]
pub struct T4 {
    pub d: [usize; 4],
    pub v: Vec<f64>,
}

impl T4 {
    pub fn zeros(d: [usize; 4]) -> T4 {
        T4 { v: vec![0.0; d.iter().product()], d }
    }

    pub fn from_f32(t: &Tensor4) -> T4 {
        let (n, c, h, w) = t.dims();
        T4 { d: [n, c, h, w], v: t.data().iter().map(|&x| x as f64).collect() }
    }

    pub fn to_f32(&self) -> Tensor4 {
        Tensor4::new(
            (self.d[0], self.d[1], self.d[2], self.d[3]),
            self.v.iter().map(|&x| x as f32).collect(),
        )
        .unwrap()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.v[((n * self.d[1] + c) * self.d[2] + h) * self.d[3] + w]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, val: f64) {
        self.v[((n * self.d[1] + c) * self.d[2] + h) * self.d[3] + w] = val;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    Zero,
    Reflect,
}

/// Source coordinate for a (possibly padded) position, or None for zero
/// padding outside the image.
fn src_index(i: isize, size: usize, pad: Pad) -> Option<usize> {
    if i >= 0 && (i as usize) < size {
        return Some(i as usize);
    }
    match pad {
        Pad::Zero => None,
        Pad::Reflect => Some(if i < 0 { (-i) as usize } else { 2 * (size - 1) - i as usize }),
    }
}

/// Direct six-level loop-nest convolution; weights (out, in, p, q).
pub fn conv2d_ref(x: &T4, w: &T4, bias: Option<&[f64]>, stride: usize, pad: usize, mode: Pad) -> T4 {
    let [n, in_c, h, wd] = x.d;
    let [out_c, _, p, q] = w.d;
    let oh = (h + 2 * pad - p) / stride + 1;
    let ow = (wd + 2 * pad - q) / stride + 1;
    let mut out = T4::zeros([n, out_c, oh, ow]);
    for b in 0..n {
        for oc in 0..out_c {
            for r in 0..oh {
                for col in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[oc]);
                    for ic in 0..in_c {
                        for kr in 0..p {
                            for kc in 0..q {
                                let ir = (r * stride + kr) as isize - pad as isize;
                                let iw = (col * stride + kc) as isize - pad as isize;
                                let (Some(ir), Some(iw)) =
                                    (src_index(ir, h, mode), src_index(iw, wd, mode))
                                else {
                                    continue;
                                };
                                acc += x.at(b, ic, ir, iw) * w.at(oc, ic, kr, kc);
                            }
                        }
                    }
                    out.set(b, oc, r, col, acc);
                }
            }
        }
    }
    out
}

/// Scatter-form transposed convolution; weights (in, out, p, q).
pub fn deconv_ref(x: &T4, w: &T4, bias: Option<&[f64]>, stride: usize, pad: usize) -> T4 {
    let [n, in_c, h, wd] = x.d;
    let [_, out_c, p, q] = w.d;
    let oh = (h - 1) * stride + p - 2 * pad;
    let ow = (wd - 1) * stride + q - 2 * pad;
    let mut out = T4::zeros([n, out_c, oh, ow]);
    if let Some(bv) = bias {
        for b in 0..n {
            for oc in 0..out_c {
                for r in 0..oh {
                    for c in 0..ow {
                        out.set(b, oc, r, c, bv[oc]);
                    }
                }
            }
        }
    }
    for b in 0..n {
        for ic in 0..in_c {
            for ih in 0..h {
                for iw in 0..wd {
                    let xv = x.at(b, ic, ih, iw);
                    for oc in 0..out_c {
                        for kr in 0..p {
                            for kc in 0..q {
                                let r = (ih * stride + kr) as isize - pad as isize;
                                let c = (iw * stride + kc) as isize - pad as isize;
                                if r >= 0 && (r as usize) < oh && c >= 0 && (c as usize) < ow {
                                    let cur = out.at(b, oc, r as usize, c as usize);
                                    out.set(b, oc, r as usize, c as usize, cur + xv * w.at(ic, oc, kr, kc));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Training-mode batch norm (biased batch variance, epsilon inside the
/// square root); running statistics are irrelevant to the loss.
pub fn batchnorm_train_ref(x: &T4, gamma: &[f64], beta: &[f64], eps: f64) -> T4 {
    let [n, c, h, w] = x.d;
    let count = (n * h * w) as f64;
    let mut out = T4::zeros(x.d);
    for ic in 0..c {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for b in 0..n {
            for r in 0..h {
                for col in 0..w {
                    let v = x.at(b, ic, r, col);
                    sum += v;
                    sumsq += v * v;
                }
            }
        }
        let mean = sum / count;
        let var = (sumsq / count - mean * mean).max(0.0);
        let istd = 1.0 / (var + eps).sqrt();
        for b in 0..n {
            for r in 0..h {
                for col in 0..w {
                    let v = (x.at(b, ic, r, col) - mean) * istd;
                    out.set(b, ic, r, col, gamma[ic] * v + beta[ic]);
                }
            }
        }
    }
    out
}

pub fn relu_ref(x: &T4) -> T4 {
    T4 { d: x.d, v: x.v.iter().map(|&v| v.max(0.0)).collect() }
}

/// 3x3/stride-2/pad-1 max pool over valid positions only.
pub fn maxpool3s2_ref(x: &T4) -> T4 {
    let [n, c, h, w] = x.d;
    let oh = (h - 1) / 2 + 1;
    let ow = (w - 1) / 2 + 1;
    let mut out = T4::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ic in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for dr in 0..3isize {
                        for dc in 0..3isize {
                            let ir = (r * 2) as isize - 1 + dr;
                            let iw = (col * 2) as isize - 1 + dc;
                            if ir >= 0 && (ir as usize) < h && iw >= 0 && (iw as usize) < w {
                                best = best.max(x.at(b, ic, ir as usize, iw as usize));
                            }
                        }
                    }
                    out.set(b, ic, r, col, best);
                }
            }
        }
    }
    out
}

/// Floor-boundary partition adaptive average pool.
pub fn adaptive_avgpool_ref(x: &T4, th: usize, tw: usize) -> T4 {
    let [n, c, h, w] = x.d;
    let mut out = T4::zeros([n, c, th, tw]);
    for b in 0..n {
        for ic in 0..c {
            for tr in 0..th {
                let (r0, r1) = (tr * h / th, (tr + 1) * h / th);
                for tc in 0..tw {
                    let (c0, c1) = (tc * w / tw, (tc + 1) * w / tw);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        for col in c0..c1 {
                            acc += x.at(b, ic, r, col);
                        }
                    }
                    out.set(b, ic, tr, tc, acc / ((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
    }
    out
}

/// Size-preserving 3x3 average pool with reflect padding.
pub fn avgpool3_reflect_ref(x: &T4) -> T4 {
    let [n, c, h, w] = x.d;
    let mut out = T4::zeros(x.d);
    for b in 0..n {
        for ic in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let mut acc = 0.0;
                    for dr in -1isize..=1 {
                        for dc in -1isize..=1 {
                            let ir = src_index(r as isize + dr, h, Pad::Reflect).unwrap();
                            let iw = src_index(col as isize + dc, w, Pad::Reflect).unwrap();
                            acc += x.at(b, ic, ir, iw);
                        }
                    }
                    out.set(b, ic, r, col, acc / 9.0);
                }
            }
        }
    }
    out
}

pub fn mse_ref(pred: &T4, target: &T4) -> f64 {
    let mut acc = 0.0;
    for (&p, &t) in pred.v.iter().zip(&target.v) {
        acc += (p - t) * (p - t);
    }
    acc / pred.v.len() as f64
}

/// MSE of an f32 prediction against an f32 target, accumulated in f64.
pub fn mse_f32_ref(pred: &Tensor4, target: &Tensor4) -> f64 {
    let mut acc = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        acc += (p as f64 - t as f64) * (p as f64 - t as f64);
    }
    acc / pred.len() as f64
}

// ---------------------------------------------------------------------------
// f64 twin of the assembled network
// ---------------------------------------------------------------------------

pub type ParamMap = BTreeMap<String, T4>;

pub fn snapshot_params(net: &vrae_core::model::VraeNetwork) -> ParamMap {
    net.named_params()
        .into_iter()
        .map(|(name, t)| (name, T4::from_f32(t)))
        .collect()
}

fn chan(params: &ParamMap, name: &str) -> Vec<f64> {
    params[name].v.clone()
}

/// Training-mode forward of the whole architecture in f64, driven by the
/// parameter names. Structure mirrors the decided layer table: stem
/// (7x7/s2/p3 conv, BN, ReLU, 3x3/s2 max pool), bottleneck stages with
/// projection skips, pool-conv-BN-ReLU auxiliary injections, and a
/// 4x4/s2/p1 transposed-conv decoder with ReLU after every layer.
pub fn vrae_forward_train_ref(config: &VraeConfig, params: &ParamMap, x: &T4) -> T4 {
    let eps = 1e-5;
    let stem = conv2d_ref(x, &params["stem.conv.weight"], None, 2, 3, Pad::Zero);
    let stem =
        batchnorm_train_ref(&stem, &chan(params, "stem.bn.gamma"), &chan(params, "stem.bn.beta"), eps);
    let mut cur = maxpool3s2_ref(&relu_ref(&stem));

    for stage in 2..=config.depth {
        let aux_name = format!("aux{}.conv.weight", stage - 1);
        if config.arch == Arch::Vrae && params.contains_key(&aux_name) {
            let (th, tw) = config.stage_hw(stage - 1);
            let pooled = adaptive_avgpool_ref(x, th, tw);
            let conv = conv2d_ref(&pooled, &params[&aux_name], None, 1, 1, Pad::Reflect);
            let bn = batchnorm_train_ref(
                &conv,
                &chan(params, &format!("aux{}.bn.gamma", stage - 1)),
                &chan(params, &format!("aux{}.bn.beta", stage - 1)),
                eps,
            );
            let injected = relu_ref(&bn);
            for (c, i) in cur.v.iter_mut().zip(&injected.v) {
                *c += i;
            }
        }
        let stride = if stage == 2 { 1 } else { 2 };
        for b in 0..config.stage_blocks[stage - 1] {
            let p = format!("stage{stage}.block{b}");
            let bstride = if b == 0 { stride } else { 1 };
            let bn = |t: &T4, tag: &str| {
                batchnorm_train_ref(
                    t,
                    &chan(params, &format!("{p}.{tag}.gamma")),
                    &chan(params, &format!("{p}.{tag}.beta")),
                    eps,
                )
            };
            let r = relu_ref(&bn(
                &conv2d_ref(&cur, &params[&format!("{p}.reduce.weight")], None, 1, 0, Pad::Zero),
                "reduce_bn",
            ));
            let t = relu_ref(&bn(
                &conv2d_ref(&r, &params[&format!("{p}.spatial.weight")], None, bstride, 1, Pad::Zero),
                "spatial_bn",
            ));
            let mut u = bn(
                &conv2d_ref(&t, &params[&format!("{p}.restore.weight")], None, 1, 0, Pad::Zero),
                "restore_bn",
            );
            let skip = if params.contains_key(&format!("{p}.proj.weight")) {
                bn(
                    &conv2d_ref(&cur, &params[&format!("{p}.proj.weight")], None, bstride, 0, Pad::Zero),
                    "proj_bn",
                )
            } else {
                cur.clone()
            };
            for (uv, sv) in u.v.iter_mut().zip(&skip.v) {
                *uv += sv;
            }
            cur = relu_ref(&u);
        }
    }

    for j in 0..config.depth {
        let w = &params[&format!("decoder{j}.weight")];
        let bias = chan(params, &format!("decoder{j}.bias"));
        cur = relu_ref(&deconv_ref(&cur, w, Some(&bias), 2, 1));
    }
    cur
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central finite difference of `loss` w.r.t. entry `idx` of parameter
/// `name`, evaluated on a scratch copy of the parameter map.
pub fn fd_param(
    params: &mut ParamMap,
    name: &str,
    idx: usize,
    step: f64,
    mut loss: impl FnMut(&ParamMap) -> f64,
) -> f64 {
    let original = params[name].v[idx];
    params.get_mut(name).unwrap().v[idx] = original + step;
    let up = loss(params);
    params.get_mut(name).unwrap().v[idx] = original - step;
    let down = loss(params);
    params.get_mut(name).unwrap().v[idx] = original;
    (up - down) / (2.0 * step)
}

/// Relative error with a scale floor: near-zero entries are compared
/// against `scale` instead of their own magnitude.
pub fn rel_err(analytic: f64, fd: f64, scale: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(scale)
}

/// Deterministic sample of up to `count` indices in [0, len).
pub fn sample_indices(len: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut picked: Vec<usize> = (0..count).map(|_| rng.below(len as u64) as usize).collect();
    picked.sort_unstable();
    picked.dedup();
    picked
}

pub fn random_tensor(dims: (usize, usize, usize, usize), seed: u64, lo: f32, hi: f32) -> Tensor4 {
    let mut rng = Rng::new(seed);
    Tensor4::from_fn(dims, |_, _, _, _| lo + (hi - lo) * rng.next_f32())
}

/// Sum of absolute horizontal plus vertical neighbor differences.
pub fn total_variation(t: &Tensor4) -> f64 {
    let (n, c, h, w) = t.dims();
    let mut tv = 0.0f64;
    for b in 0..n {
        for ic in 0..c {
            let p = t.plane(b, ic);
            for r in 0..h {
                for col in 0..w {
                    if col + 1 < w {
                        tv += (p[r * w + col + 1] - p[r * w + col]).abs() as f64;
                    }
                    if r + 1 < h {
                        tv += (p[(r + 1) * w + col] - p[r * w + col]).abs() as f64;
                    }
                }
            }
        }
    }
    tv
}

/// Independent SSIM: same constants as production, but per-window
/// statistics via explicit two-pass mean-then-moments loops.
pub fn ssim_reference(pred: &Tensor4, target: &Tensor4) -> f64 {
    let (n, c, h, w) = pred.dims();
    let win = 11usize;
    let sigma = 1.5f64;
    let center = (win / 2) as f64;
    let mut weights = vec![0.0f64; win * win];
    let mut sum = 0.0;
    for r in 0..win {
        for cc in 0..win {
            let v = (-((r as f64 - center).powi(2) + (cc as f64 - center).powi(2))
                / (2.0 * sigma * sigma))
                .exp();
            weights[r * win + cc] = v;
            sum += v;
        }
    }
    for v in &mut weights {
        *v /= sum;
    }
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut acc = 0.0;
    let mut count = 0usize;
    for b in 0..n {
        for ic in 0..c {
            for r0 in 0..=(h - win) {
                for c0 in 0..=(w - win) {
                    let mut mx = 0.0;
                    let mut my = 0.0;
                    for r in 0..win {
                        for cc in 0..win {
                            let g = weights[r * win + cc];
                            mx += g * pred.at(b, ic, r0 + r, c0 + cc) as f64;
                            my += g * target.at(b, ic, r0 + r, c0 + cc) as f64;
                        }
                    }
                    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                    for r in 0..win {
                        for cc in 0..win {
                            let g = weights[r * win + cc];
                            let dx = pred.at(b, ic, r0 + r, c0 + cc) as f64 - mx;
                            let dy = target.at(b, ic, r0 + r, c0 + cc) as f64 - my;
                            vx += g * dx * dx;
                            vy += g * dy * dy;
                            cov += g * dx * dy;
                        }
                    }
                    acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
    }
    acc / count as f64
}

/// The fixed pairs of the overfit sanity run: eight smooth low-contrast
/// vehicle-scale tones degraded by the default pipeline.
pub fn overfit_pairs(hw: usize) -> Vec<(Tensor4, Tensor4)> {
    use vrae_core::data::{degrade, DegradationConfig};
    let mut rng = Rng::new(2024);
    (0..8u64)
        .map(|i| {
            let base = 0.1 + 0.2 * i as f32 / 8.0;
            let (fx, fy) = (0.5 + rng.next_f32(), 0.5 + rng.next_f32());
            let clean = Tensor4::from_fn((1, 3, hw, hw), |_, c, h, w| {
                let v = base
                    + 0.05 * ((h as f32 * fy / 9.0).sin() * (w as f32 * fx / 11.0).cos())
                    + 0.02 * c as f32;
                v.clamp(0.0, 1.0)
            });
            let degraded =
                degrade(&clean, &DegradationConfig { seed: 77, ..Default::default() }, i).unwrap();
            (clean, degraded)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gradient checks shared by the oracle and acceptance suites
// ---------------------------------------------------------------------------

pub mod gradcheck {
    use super::*;
    use vrae_core::nn;
    use vrae_core::tensor::{ConvSpec, PadMode};

    pub const FD_STEP: f64 = 1e-3;
    pub const FD_TOL: f64 = 1e-4;

    /// Checks one analytic gradient tensor against central differences of
    /// `loss` over the f64 parameter map.
    pub fn check_grads(
        label: &str,
        analytic: &Tensor4,
        params: &mut ParamMap,
        name: &str,
        loss: impl FnMut(&ParamMap) -> f64 + Copy,
        tol: f64,
        step: f64,
    ) {
        let scale = analytic.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
        for idx in 0..analytic.len() {
            let fd = fd_param(params, name, idx, step, loss);
            let err = rel_err(analytic.data()[idx] as f64, fd, scale.max(1e-6));
            assert!(
                err <= tol,
                "{label}[{idx}]: analytic {} vs fd {fd}, rel err {err}",
                analytic.data()[idx]
            );
        }
    }

    pub fn conv_zero_pad() {
        let x = random_tensor((1, 2, 5, 5), 61, -1.0, 1.0);
        let spec = ConvSpec::new(2, 3, 3, 1, PadMode::Zero, 1, false);
        let w = random_tensor(spec.conv_weight_dims(), 62, -0.5, 0.5);
        let target = random_tensor((1, 3, 5, 5), 63, -1.0, 1.0);

        let y = nn::conv2d_forward(&x, &spec, &w, None).unwrap();
        let (_, upstream) = nn::mse_loss(&y, &target).unwrap();
        let grads = nn::conv2d_backward(&x, &spec, &w, &upstream).unwrap();

        let mut params = ParamMap::new();
        params.insert("w".into(), T4::from_f32(&w));
        params.insert("x".into(), T4::from_f32(&x));
        let t64 = T4::from_f32(&target);
        let loss =
            |p: &ParamMap| mse_ref(&conv2d_ref(&p["x"], &p["w"], None, 1, 1, Pad::Zero), &t64);

        check_grads("conv weight", &grads.weight, &mut params, "w", loss, FD_TOL, FD_STEP);
        check_grads("conv input", &grads.input, &mut params, "x", loss, FD_TOL, FD_STEP);
    }

    pub fn conv_reflect_strided() {
        let x = random_tensor((2, 2, 6, 6), 71, -1.0, 1.0);
        let spec = ConvSpec::new(2, 2, 3, 2, PadMode::Reflect, 1, false);
        let w = random_tensor(spec.conv_weight_dims(), 72, -0.5, 0.5);
        let target = random_tensor((2, 2, 3, 3), 73, -1.0, 1.0);

        let y = nn::conv2d_forward(&x, &spec, &w, None).unwrap();
        let (_, upstream) = nn::mse_loss(&y, &target).unwrap();
        let grads = nn::conv2d_backward(&x, &spec, &w, &upstream).unwrap();

        let mut params = ParamMap::new();
        params.insert("w".into(), T4::from_f32(&w));
        params.insert("x".into(), T4::from_f32(&x));
        let t64 = T4::from_f32(&target);
        let loss =
            |p: &ParamMap| mse_ref(&conv2d_ref(&p["x"], &p["w"], None, 2, 1, Pad::Reflect), &t64);

        check_grads("reflect conv weight", &grads.weight, &mut params, "w", loss, FD_TOL, FD_STEP);
        check_grads("reflect conv input", &grads.input, &mut params, "x", loss, FD_TOL, FD_STEP);
    }

    pub fn deconv() {
        let x = random_tensor((1, 2, 4, 4), 81, -1.0, 1.0);
        let spec = ConvSpec::new(2, 2, 4, 2, PadMode::Zero, 1, true);
        let w = random_tensor(spec.deconv_weight_dims(), 82, -0.5, 0.5);
        let bias = vec![0.1f32, -0.3];
        let target = random_tensor((1, 2, 8, 8), 83, -1.0, 1.0);

        let y = nn::conv_transpose2d_forward(&x, &spec, &w, Some(&bias)).unwrap();
        let (_, upstream) = nn::mse_loss(&y, &target).unwrap();
        let grads = nn::conv_transpose2d_backward(&x, &spec, &w, &upstream).unwrap();

        let mut params = ParamMap::new();
        params.insert("w".into(), T4::from_f32(&w));
        params.insert("x".into(), T4::from_f32(&x));
        params.insert("b".into(), T4 { d: [1, 2, 1, 1], v: bias.iter().map(|&b| b as f64).collect() });
        let t64 = T4::from_f32(&target);
        let loss =
            |p: &ParamMap| mse_ref(&deconv_ref(&p["x"], &p["w"], Some(&p["b"].v), 2, 1), &t64);

        check_grads("deconv weight", &grads.weight, &mut params, "w", loss, FD_TOL, FD_STEP);
        check_grads("deconv bias", grads.bias.as_ref().unwrap(), &mut params, "b", loss, FD_TOL, FD_STEP);
        check_grads("deconv input", &grads.input, &mut params, "x", loss, FD_TOL, FD_STEP);
    }

    pub fn batchnorm() {
        let x = random_tensor((2, 3, 4, 4), 91, -1.0, 1.0);
        let gamma = vec![1.2f32, 0.8, -0.5];
        let beta = vec![0.1f32, -0.2, 0.3];
        let target = random_tensor((2, 3, 4, 4), 92, -1.0, 1.0);

        let mut rm = vec![0.0f32; 3];
        let mut rv = vec![1.0f32; 3];
        let (y, cache) = nn::batchnorm_train(&x, &gamma, &beta, &mut rm, &mut rv, 1e-5, 0.1).unwrap();
        let (_, upstream) = nn::mse_loss(&y, &target).unwrap();
        let grads = nn::batchnorm_backward(&cache, &gamma, &upstream).unwrap();

        let mut params = ParamMap::new();
        params.insert("x".into(), T4::from_f32(&x));
        params.insert("g".into(), T4 { d: [1, 3, 1, 1], v: gamma.iter().map(|&v| v as f64).collect() });
        params.insert("b".into(), T4 { d: [1, 3, 1, 1], v: beta.iter().map(|&v| v as f64).collect() });
        let t64 = T4::from_f32(&target);
        let loss =
            |p: &ParamMap| mse_ref(&batchnorm_train_ref(&p["x"], &p["g"].v, &p["b"].v, 1e-5), &t64);

        check_grads("bn gamma", &grads.gamma, &mut params, "g", loss, FD_TOL, FD_STEP);
        check_grads("bn beta", &grads.beta, &mut params, "b", loss, FD_TOL, FD_STEP);
        check_grads("bn input", &grads.input, &mut params, "x", loss, FD_TOL, FD_STEP);
    }

    pub fn relu_composite() {
        let x = random_tensor((2, 2, 5, 5), 101, -1.0, 1.0);
        let spec = ConvSpec::new(2, 3, 3, 1, PadMode::Zero, 1, false);
        let w = random_tensor(spec.conv_weight_dims(), 102, -0.5, 0.5);
        let gamma = vec![1.1f32, 0.9, 1.3];
        let beta = vec![0.05f32, -0.1, 0.2];
        let target = random_tensor((2, 3, 5, 5), 103, 0.0, 1.0);

        let conv_out = nn::conv2d_forward(&x, &spec, &w, None).unwrap();
        let mut rm = vec![0.0f32; 3];
        let mut rv = vec![1.0f32; 3];
        let (bn_out, bn_cache) =
            nn::batchnorm_train(&conv_out, &gamma, &beta, &mut rm, &mut rv, 1e-5, 0.1).unwrap();
        let act = nn::relu(&bn_out);
        let (_, upstream) = nn::mse_loss(&act, &target).unwrap();
        let g_act = nn::relu_backward(&act, &upstream);
        let bn_grads = nn::batchnorm_backward(&bn_cache, &gamma, &g_act).unwrap();
        let conv_grads = nn::conv2d_backward(&x, &spec, &w, &bn_grads.input).unwrap();

        let mut params = ParamMap::new();
        params.insert("w".into(), T4::from_f32(&w));
        params.insert("g".into(), T4 { d: [1, 3, 1, 1], v: gamma.iter().map(|&v| v as f64).collect() });
        let beta64: Vec<f64> = beta.iter().map(|&v| v as f64).collect();
        let x64 = T4::from_f32(&x);
        let t64 = T4::from_f32(&target);
        let loss = |p: &ParamMap| {
            let conv = conv2d_ref(&x64, &p["w"], None, 1, 1, Pad::Zero);
            mse_ref(&relu_ref(&batchnorm_train_ref(&conv, &p["g"].v, &beta64, 1e-5)), &t64)
        };

        check_grads("composite conv weight", &conv_grads.weight, &mut params, "w", loss, FD_TOL, FD_STEP);
        check_grads("composite bn gamma", &bn_grads.gamma, &mut params, "g", loss, FD_TOL, FD_STEP);
    }

    pub fn mse() {
        let pred = random_tensor((1, 2, 4, 4), 111, -1.0, 1.0);
        let target = random_tensor((1, 2, 4, 4), 112, -1.0, 1.0);
        let (_, grad) = nn::mse_loss(&pred, &target).unwrap();

        let mut params = ParamMap::new();
        params.insert("p".into(), T4::from_f32(&pred));
        let t64 = T4::from_f32(&target);
        let loss = |p: &ParamMap| mse_ref(&p["p"], &t64);
        check_grads("mse pred", &grad, &mut params, "p", loss, FD_TOL, FD_STEP);
    }

    pub fn pools() {
        let x = random_tensor((1, 2, 6, 6), 121, -1.0, 1.0);
        let target = random_tensor((1, 2, 3, 3), 122, -1.0, 1.0);

        let (y, cache) = nn::maxpool_3x3_s2(&x).unwrap();
        let (_, upstream) = nn::mse_loss(&y, &target).unwrap();
        let g = nn::maxpool_backward(&cache, &upstream);
        let mut params = ParamMap::new();
        params.insert("x".into(), T4::from_f32(&x));
        let t64 = T4::from_f32(&target);
        let loss = |p: &ParamMap| mse_ref(&maxpool3s2_ref(&p["x"]), &t64);
        check_grads("maxpool input", &g, &mut params, "x", loss, FD_TOL, FD_STEP);

        let y = nn::adaptive_avgpool(&x, 2, 3).unwrap();
        let target = random_tensor((1, 2, 2, 3), 123, -1.0, 1.0);
        let (_, upstream) = nn::mse_loss(&y, &target).unwrap();
        let g = nn::adaptive_avgpool_backward(x.dims(), &upstream);
        let t64 = T4::from_f32(&target);
        let loss = |p: &ParamMap| mse_ref(&adaptive_avgpool_ref(&p["x"], 2, 3), &t64);
        check_grads("adaptive pool input", &g, &mut params, "x", loss, FD_TOL, FD_STEP);
    }

    /// End-to-end check of the thin depth-2 network on 32x32 inputs:
    /// analytic gradients of every parameter against finite differences
    /// of the f64 twin. The step is smaller than the per-layer one so the
    /// secants stay clear of ReLU kinks; the twin makes the quotient
    /// noise negligible at that step.
    pub fn end_to_end_reduced_vrae2(tol: f64) {
        use vrae_core::model::{build_network, Arch, VraeConfig};
        let config = VraeConfig::reduced(Arch::Vrae, 2, 32);
        let mut net = build_network(&config, 17).unwrap();
        let x = random_tensor((2, 3, 32, 32), 5, 0.0, 1.0);
        let target = random_tensor((2, 3, 32, 32), 6, 0.0, 1.0);

        let (pred, cache) = net.forward_train(&x).unwrap();
        let (_, loss_grad) = nn::mse_loss(&pred, &target).unwrap();
        let grads = net.backward(&cache, &loss_grad).unwrap();

        let mut params = snapshot_params(&net);
        let x64 = T4::from_f32(&x);
        let t64 = T4::from_f32(&target);
        let loss = |p: &ParamMap| mse_ref(&vrae_forward_train_ref(&config, p, &x64), &t64);

        let twin = vrae_forward_train_ref(&config, &params, &x64);
        assert!(
            pred.max_abs_diff(&twin.to_f32()) <= 1e-4,
            "f64 twin diverged from the f32 forward"
        );

        let names: Vec<String> = params.keys().cloned().collect();
        let mut rng = Rng::new(99);
        for name in &names {
            let g = grads.get(name).unwrap().clone();
            let scale = g.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
            for idx in sample_indices(g.len(), 8, &mut rng) {
                let fd = fd_param(&mut params, name, idx, 1e-5, loss);
                let err = rel_err(g.data()[idx] as f64, fd, scale.max(1e-7));
                assert!(
                    err <= tol,
                    "{name}[{idx}]: analytic {} vs fd {fd}, rel err {err}",
                    g.data()[idx]
                );
            }
        }
    }
}
