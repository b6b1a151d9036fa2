//! Activations and pooling.

use crate::error::{Error, Result};
use crate::tensor::{PadMode, Tensor4};

use super::conv::pad_input;

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

/// Backward through ReLU given the *activated output* (the mask `out > 0`
/// is identical to `input > 0`; the subgradient at exactly 0 is 0).
pub fn relu_backward(activated: &Tensor4, upstream: &Tensor4) -> Tensor4 {
    debug_assert_eq!(activated.dims(), upstream.dims());
    let mut g = upstream.clone();
    for (d, &a) in g.data_mut().iter_mut().zip(activated.data()) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    g
}

/// Backward cache of the 3x3/stride-2 max pool: the winning input index
/// (within the plane) per output element.
#[derive(Debug)]
pub struct MaxPoolCache {
    pub in_dims: (usize, usize, usize, usize),
    pub argmax: Vec<u32>,
}

/// The ResNet stem pool: 3x3 window, stride 2, pad 1. Padded positions
/// never win (the max runs over valid pixels only), matching the usual
/// negative-infinity padding semantics.
pub fn maxpool_3x3_s2(x: &Tensor4) -> Result<(Tensor4, MaxPoolCache)> {
    let (n, c, h, w) = x.dims();
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("max pool needs input of at least 2x2, got {h}x{w}")));
    }
    let oh = (h + 2 - 3) / 2 + 1;
    let ow = (w + 2 - 3) / 2 + 1;
    let mut out = Tensor4::zeros((n, c, oh, ow));
    let mut argmax = vec![0u32; n * c * oh * ow];
    let mut cursor = 0usize;
    for in_ in 0..n {
        for ic in 0..c {
            let src = x.plane(in_, ic);
            let dst = out.plane_mut(in_, ic);
            for r in 0..oh {
                for o in 0..ow {
                    let r0 = (r * 2) as isize - 1;
                    let c0 = (o * 2) as isize - 1;
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dr in 0..3isize {
                        let rr = r0 + dr;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        for dc in 0..3isize {
                            let cc = c0 + dc;
                            if cc < 0 || cc >= w as isize {
                                continue;
                            }
                            let idx = rr as usize * w + cc as usize;
                            let v = src[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    dst[r * ow + o] = best;
                    argmax[cursor] = best_idx as u32;
                    cursor += 1;
                }
            }
        }
    }
    Ok((out, MaxPoolCache { in_dims: (n, c, h, w), argmax }))
}

pub fn maxpool_backward(cache: &MaxPoolCache, upstream: &Tensor4) -> Tensor4 {
    let (n, c, h, w) = cache.in_dims;
    let (un, uc, uh, uw) = upstream.dims();
    debug_assert_eq!((un, uc), (n, c));
    let mut g = Tensor4::zeros((n, c, h, w));
    let mut cursor = 0usize;
    for in_ in 0..n {
        for ic in 0..c {
            let up = upstream.plane(in_, ic);
            let dst = g.plane_mut(in_, ic);
            for &u in up.iter().take(uh * uw) {
                dst[cache.argmax[cursor] as usize] += u;
                cursor += 1;
            }
        }
    }
    g
}

/// Size-preserving 3x3 average pool, stride 1, reflect padding 1. Window
/// sums run in f64 so constant images are reproduced exactly.
pub fn avgpool_3x3_s1_reflect(x: &Tensor4) -> Result<Tensor4> {
    let (n, c, h, w) = x.dims();
    let padded = pad_input(x, 1, PadMode::Reflect)?;
    let wp = w + 2;
    let mut out = Tensor4::zeros((n, c, h, w));
    for in_ in 0..n {
        for ic in 0..c {
            let src = padded.plane(in_, ic);
            let dst = out.plane_mut(in_, ic);
            for r in 0..h {
                for o in 0..w {
                    let mut acc = 0.0f64;
                    for dr in 0..3 {
                        let row = &src[(r + dr) * wp + o..];
                        acc += row[0] as f64 + row[1] as f64 + row[2] as f64;
                    }
                    dst[r * w + o] = (acc / 9.0) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Partition boundary of the adaptive pool: cell j covers input rows
/// `[floor(j*size/target), floor((j+1)*size/target))`.
#[inline]
fn cell_bounds(j: usize, size: usize, target: usize) -> (usize, usize) {
    (j * size / target, (j + 1) * size / target)
}

/// Adaptive average pool onto exactly (target_h, target_w): averages the
/// non-overlapping cells of a floor-boundary partition.
pub fn adaptive_avgpool(x: &Tensor4, target_h: usize, target_w: usize) -> Result<Tensor4> {
    let (n, c, h, w) = x.dims();
    if target_h == 0 || target_w == 0 {
        return Err(Error::Config("adaptive pool target must be >= 1".into()));
    }
    if target_h > h || target_w > w {
        return Err(Error::Shape(format!(
            "adaptive pool target {target_h}x{target_w} is larger than input {h}x{w}"
        )));
    }
    let mut out = Tensor4::zeros((n, c, target_h, target_w));
    for in_ in 0..n {
        for ic in 0..c {
            let src = x.plane(in_, ic);
            let dst = out.plane_mut(in_, ic);
            for tr in 0..target_h {
                let (r0, r1) = cell_bounds(tr, h, target_h);
                for tc in 0..target_w {
                    let (c0, c1) = cell_bounds(tc, w, target_w);
                    let mut acc = 0.0f64;
                    for r in r0..r1 {
                        for v in &src[r * w + c0..r * w + c1] {
                            acc += *v as f64;
                        }
                    }
                    dst[tr * target_w + tc] = (acc / ((r1 - r0) * (c1 - c0)) as f64) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Backward of the adaptive average pool: every input pixel of a cell
/// receives the cell's upstream gradient divided by the cell size.
pub fn adaptive_avgpool_backward(
    in_dims: (usize, usize, usize, usize),
    upstream: &Tensor4,
) -> Tensor4 {
    let (n, c, h, w) = in_dims;
    let (_, _, th, tw) = upstream.dims();
    let mut g = Tensor4::zeros((n, c, h, w));
    for in_ in 0..n {
        for ic in 0..c {
            let up = upstream.plane(in_, ic);
            let dst = g.plane_mut(in_, ic);
            for tr in 0..th {
                let (r0, r1) = cell_bounds(tr, h, th);
                for tc in 0..tw {
                    let (c0, c1) = cell_bounds(tc, w, tw);
                    let share = up[tr * tw + tc] / ((r1 - r0) * (c1 - c0)) as f32;
                    for r in r0..r1 {
                        for d in &mut dst[r * w + c0..r * w + c1] {
                            *d += share;
                        }
                    }
                }
            }
        }
    }
    g
}
