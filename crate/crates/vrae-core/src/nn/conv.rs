//! 2D convolution, forward and backward.
//!
//! Padding is materialized up front (zero or reflect), which keeps the hot
//! loops branch-free; gradients flow back through the padding by folding
//! the padded-gradient borders onto their source pixels.

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, PadMode, Tensor4};
use crate::threading::for_each_chunk;

/// Gradients of one convolution layer.
#[derive(Debug)]
pub struct ConvGrads {
    pub weight: Tensor4,
    /// Present iff the layer has a bias; dims (1, out_channels, 1, 1).
    pub bias: Option<Tensor4>,
    pub input: Tensor4,
}

/// Source index inside the unpadded axis for a padded position, or None
/// when the position falls on zero padding.
#[inline]
fn pad_source(padded_idx: usize, pad: usize, size: usize, mode: PadMode) -> Option<usize> {
    let i = padded_idx as isize - pad as isize;
    if i >= 0 && (i as usize) < size {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let reflected = if i < 0 { (-i) as usize } else { 2 * (size - 1) - i as usize };
            Some(reflected)
        }
    }
}

pub(crate) fn pad_input(x: &Tensor4, pad: usize, mode: PadMode) -> Result<Tensor4> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (n, c, h, w) = x.dims();
    if mode == PadMode::Reflect && (pad >= h || pad >= w) {
        return Err(Error::Shape(format!(
            "reflect pad {pad} needs input dims > pad, got {h}x{w}"
        )));
    }
    let mut out = Tensor4::zeros((n, c, h + 2 * pad, w + 2 * pad));
    let row_src: Vec<Option<usize>> = (0..h + 2 * pad).map(|i| pad_source(i, pad, h, mode)).collect();
    let col_src: Vec<Option<usize>> = (0..w + 2 * pad).map(|i| pad_source(i, pad, w, mode)).collect();
    for in_ in 0..n {
        for ic in 0..c {
            let src = x.plane(in_, ic);
            let dst = out.plane_mut(in_, ic);
            let wp = w + 2 * pad;
            for (ph, rs) in row_src.iter().enumerate() {
                let Some(rs) = rs else { continue };
                let src_row = &src[rs * w..rs * w + w];
                let dst_row = &mut dst[ph * wp..(ph + 1) * wp];
                for (pw, cs) in col_src.iter().enumerate() {
                    if let Some(cs) = cs {
                        dst_row[pw] = src_row[*cs];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Folds a gradient w.r.t. the padded input back onto the unpadded input.
fn unpad_grad(g_padded: &Tensor4, pad: usize, mode: PadMode, h: usize, w: usize) -> Tensor4 {
    if pad == 0 {
        return g_padded.clone();
    }
    let (n, c, _, _) = g_padded.dims();
    let mut out = Tensor4::zeros((n, c, h, w));
    let row_src: Vec<Option<usize>> = (0..h + 2 * pad).map(|i| pad_source(i, pad, h, mode)).collect();
    let col_src: Vec<Option<usize>> = (0..w + 2 * pad).map(|i| pad_source(i, pad, w, mode)).collect();
    let wp = w + 2 * pad;
    for in_ in 0..n {
        for ic in 0..c {
            let src = g_padded.plane(in_, ic);
            let dst = out.plane_mut(in_, ic);
            for (ph, rs) in row_src.iter().enumerate() {
                let Some(rs) = rs else { continue };
                let src_row = &src[ph * wp..(ph + 1) * wp];
                for (pw, cs) in col_src.iter().enumerate() {
                    if let Some(cs) = cs {
                        dst[rs * w + cs] += src_row[pw];
                    }
                }
            }
        }
    }
    out
}

fn check_forward_shapes(x: &Tensor4, spec: &ConvSpec, weights: &Tensor4) -> Result<()> {
    spec.validate()?;
    let (_, c, _, _) = x.dims();
    if c != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {c} channels, spec expects in_channels={}",
            spec.in_channels
        )));
    }
    if weights.dims() != spec.conv_weight_dims() {
        return Err(Error::Shape(format!(
            "weights {:?} do not match spec's (out,in,rows,cols)={:?}",
            weights.dims(),
            spec.conv_weight_dims()
        )));
    }
    Ok(())
}

/// Direct convolution. `bias`, when present, must have `out_channels`
/// entries; the spec's `has_bias` flag and the argument must agree.
pub fn conv2d_forward(
    x: &Tensor4,
    spec: &ConvSpec,
    weights: &Tensor4,
    bias: Option<&[f32]>,
) -> Result<Tensor4> {
    check_forward_shapes(x, spec, weights)?;
    if spec.has_bias != bias.is_some() {
        return Err(Error::Config("bias presence does not match spec.has_bias".into()));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::Shape(format!(
                "bias has {} entries, expected out_channels={}",
                b.len(),
                spec.out_channels
            )));
        }
    }
    let (n, _, h, w) = x.dims();
    let (oh, ow) = spec.conv_out_hw(h, w)?;
    let padded = pad_input(x, spec.pad, spec.pad_mode)?;
    let (_, in_c, _, wp) = padded.dims();
    let (p, q) = spec.kernel;
    let (sh, sw) = spec.stride;
    let oc_n = spec.out_channels;

    let mut out = Tensor4::zeros((n, oc_n, oh, ow));
    for_each_chunk(out.data_mut(), oh * ow, |chunk_idx, plane| {
        let in_ = chunk_idx / oc_n;
        let oc = chunk_idx % oc_n;
        if let Some(b) = bias {
            plane.fill(b[oc]);
        }
        for ic in 0..in_c {
            let src = padded.plane(in_, ic);
            for kr in 0..p {
                for kc in 0..q {
                    let wv = weights.at(oc, ic, kr, kc);
                    for r in 0..oh {
                        let src_row = &src[(r * sh + kr) * wp + kc..];
                        let dst_row = &mut plane[r * ow..(r + 1) * ow];
                        if sw == 1 {
                            for (d, s) in dst_row.iter_mut().zip(src_row) {
                                *d += wv * s;
                            }
                        } else {
                            for (d, s) in dst_row.iter_mut().zip(src_row.iter().step_by(sw)) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Weight, bias and input gradients for a convolution, given the upstream
/// gradient of its output.
pub fn conv2d_backward(
    x: &Tensor4,
    spec: &ConvSpec,
    weights: &Tensor4,
    upstream: &Tensor4,
) -> Result<ConvGrads> {
    check_forward_shapes(x, spec, weights)?;
    let (n, _, h, w) = x.dims();
    let (oh, ow) = spec.conv_out_hw(h, w)?;
    if upstream.dims() != (n, spec.out_channels, oh, ow) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match output dims {:?}",
            upstream.dims(),
            (n, spec.out_channels, oh, ow)
        )));
    }
    let padded = pad_input(x, spec.pad, spec.pad_mode)?;
    let (_, in_c, hp, wp) = padded.dims();
    let (p, q) = spec.kernel;
    let (sh, sw) = spec.stride;
    let oc_n = spec.out_channels;

    let mut g_weight = Tensor4::zeros(spec.conv_weight_dims());
    for_each_chunk(g_weight.data_mut(), p * q, |chunk_idx, kernel| {
        let oc = chunk_idx / in_c;
        let ic = chunk_idx % in_c;
        for kr in 0..p {
            for kc in 0..q {
                let mut acc = 0.0f32;
                for in_ in 0..n {
                    let src = padded.plane(in_, ic);
                    let up = upstream.plane(in_, oc);
                    for r in 0..oh {
                        let src_row = &src[(r * sh + kr) * wp + kc..];
                        let up_row = &up[r * ow..(r + 1) * ow];
                        if sw == 1 {
                            for (u, s) in up_row.iter().zip(src_row) {
                                acc += u * s;
                            }
                        } else {
                            for (u, s) in up_row.iter().zip(src_row.iter().step_by(sw)) {
                                acc += u * s;
                            }
                        }
                    }
                }
                kernel[kr * q + kc] = acc;
            }
        }
    });

    let g_bias = if spec.has_bias {
        let mut gb = Tensor4::zeros((1, oc_n, 1, 1));
        for oc in 0..oc_n {
            let mut acc = 0.0f32;
            for in_ in 0..n {
                acc += upstream.plane(in_, oc).iter().sum::<f32>();
            }
            *gb.at_mut(0, oc, 0, 0) = acc;
        }
        Some(gb)
    } else {
        None
    };

    let mut g_padded = Tensor4::zeros((n, in_c, hp, wp));
    for_each_chunk(g_padded.data_mut(), hp * wp, |chunk_idx, plane| {
        let in_ = chunk_idx / in_c;
        let ic = chunk_idx % in_c;
        for oc in 0..oc_n {
            let up = upstream.plane(in_, oc);
            for kr in 0..p {
                for kc in 0..q {
                    let wv = weights.at(oc, ic, kr, kc);
                    for r in 0..oh {
                        let dst_row = &mut plane[(r * sh + kr) * wp + kc..];
                        let up_row = &up[r * ow..(r + 1) * ow];
                        if sw == 1 {
                            for (u, d) in up_row.iter().zip(dst_row.iter_mut()) {
                                *d += wv * u;
                            }
                        } else {
                            for (d, u) in dst_row.iter_mut().step_by(sw).zip(up_row) {
                                *d += wv * u;
                            }
                        }
                    }
                }
            }
        }
    });
    let g_input = unpad_grad(&g_padded, spec.pad, spec.pad_mode, h, w);

    Ok(ConvGrads { weight: g_weight, bias: g_bias, input: g_input })
}
