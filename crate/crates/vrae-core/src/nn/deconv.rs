//! Transposed 2D convolution (fractionally-strided convolution), forward
//! and backward. Weights follow the (in, out, rows, cols) layout.

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, PadMode, Tensor4};
use crate::threading::for_each_chunk;

#[derive(Debug)]
pub struct DeconvGrads {
    pub weight: Tensor4,
    pub bias: Option<Tensor4>,
    pub input: Tensor4,
}

fn check_shapes(x: &Tensor4, spec: &ConvSpec, weights: &Tensor4) -> Result<()> {
    spec.validate()?;
    if spec.pad_mode != PadMode::Zero {
        return Err(Error::Config("transposed conv supports zero padding only".into()));
    }
    let (_, c, _, _) = x.dims();
    if c != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {c} channels, spec expects in_channels={}",
            spec.in_channels
        )));
    }
    if weights.dims() != spec.deconv_weight_dims() {
        return Err(Error::Shape(format!(
            "weights {:?} do not match spec's (in,out,rows,cols)={:?}",
            weights.dims(),
            spec.deconv_weight_dims()
        )));
    }
    Ok(())
}

/// Transposed convolution: output spatial dims `(h-1)*stride - 2*pad + kernel`.
pub fn conv_transpose2d_forward(
    x: &Tensor4,
    spec: &ConvSpec,
    weights: &Tensor4,
    bias: Option<&[f32]>,
) -> Result<Tensor4> {
    check_shapes(x, spec, weights)?;
    if spec.has_bias != bias.is_some() {
        return Err(Error::Config("bias presence does not match spec.has_bias".into()));
    }
    let (n, in_c, h, w) = x.dims();
    let (oh, ow) = spec.deconv_out_hw(h, w)?;
    let (p, q) = spec.kernel;
    let (sh, sw) = spec.stride;
    let pad = spec.pad as isize;
    let oc_n = spec.out_channels;

    let mut out = Tensor4::zeros((n, oc_n, oh, ow));
    for_each_chunk(out.data_mut(), oh * ow, |chunk_idx, plane| {
        let in_ = chunk_idx / oc_n;
        let oc = chunk_idx % oc_n;
        if let Some(b) = bias {
            plane.fill(b[oc]);
        }
        for ic in 0..in_c {
            let src = x.plane(in_, ic);
            for kr in 0..p {
                for kc in 0..q {
                    let wv = weights.at(ic, oc, kr, kc);
                    for ih in 0..h {
                        let r = ih as isize * sh as isize - pad + kr as isize;
                        if r < 0 || r >= oh as isize {
                            continue;
                        }
                        let src_row = &src[ih * w..(ih + 1) * w];
                        let dst_row = &mut plane[r as usize * ow..(r as usize + 1) * ow];
                        for (iw, s) in src_row.iter().enumerate() {
                            let cpos = iw as isize * sw as isize - pad + kc as isize;
                            if cpos >= 0 && (cpos as usize) < ow {
                                dst_row[cpos as usize] += wv * s;
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

pub fn conv_transpose2d_backward(
    x: &Tensor4,
    spec: &ConvSpec,
    weights: &Tensor4,
    upstream: &Tensor4,
) -> Result<DeconvGrads> {
    check_shapes(x, spec, weights)?;
    let (n, in_c, h, w) = x.dims();
    let (oh, ow) = spec.deconv_out_hw(h, w)?;
    if upstream.dims() != (n, spec.out_channels, oh, ow) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match output dims {:?}",
            upstream.dims(),
            (n, spec.out_channels, oh, ow)
        )));
    }
    let (p, q) = spec.kernel;
    let (sh, sw) = spec.stride;
    let pad = spec.pad as isize;
    let oc_n = spec.out_channels;

    // d/d_weight: correlate input with the upstream gradient.
    let mut g_weight = Tensor4::zeros(spec.deconv_weight_dims());
    for_each_chunk(g_weight.data_mut(), p * q, |chunk_idx, kernel| {
        let ic = chunk_idx / oc_n;
        let oc = chunk_idx % oc_n;
        for kr in 0..p {
            for kc in 0..q {
                let mut acc = 0.0f32;
                for in_ in 0..n {
                    let src = x.plane(in_, ic);
                    let up = upstream.plane(in_, oc);
                    for ih in 0..h {
                        let r = ih as isize * sh as isize - pad + kr as isize;
                        if r < 0 || r >= oh as isize {
                            continue;
                        }
                        let src_row = &src[ih * w..(ih + 1) * w];
                        let up_row = &up[r as usize * ow..(r as usize + 1) * ow];
                        for (iw, s) in src_row.iter().enumerate() {
                            let cpos = iw as isize * sw as isize - pad + kc as isize;
                            if cpos >= 0 && (cpos as usize) < ow {
                                acc += s * up_row[cpos as usize];
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

    // d/d_input: gather the upstream gradient through the kernel.
    let mut g_input = Tensor4::zeros((n, in_c, h, w));
    for_each_chunk(g_input.data_mut(), h * w, |chunk_idx, plane| {
        let in_ = chunk_idx / in_c;
        let ic = chunk_idx % in_c;
        for oc in 0..oc_n {
            let up = upstream.plane(in_, oc);
            for kr in 0..p {
                for kc in 0..q {
                    let wv = weights.at(ic, oc, kr, kc);
                    for ih in 0..h {
                        let r = ih as isize * sh as isize - pad + kr as isize;
                        if r < 0 || r >= oh as isize {
                            continue;
                        }
                        let up_row = &up[r as usize * ow..(r as usize + 1) * ow];
                        let dst_row = &mut plane[ih * w..(ih + 1) * w];
                        for (iw, d) in dst_row.iter_mut().enumerate() {
                            let cpos = iw as isize * sw as isize - pad + kc as isize;
                            if cpos >= 0 && (cpos as usize) < ow {
                                *d += wv * up_row[cpos as usize];
                            }
                        }
                    }
                }
            }
        }
    });

    Ok(DeconvGrads { weight: g_weight, bias: g_bias, input: g_input })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decoder_spec(in_c: usize, out_c: usize) -> ConvSpec {
        ConvSpec::new(in_c, out_c, 4, 2, PadMode::Zero, 1, true)
    }

    #[test]
    fn decoder_config_doubles_spatial_dims() {
        let spec = decoder_spec(1, 3);
        let x = Tensor4::filled((1, 1, 4, 4), 0.25);
        let w = Tensor4::filled(spec.deconv_weight_dims(), 0.1);
        let b = vec![0.0; 3];
        let y = conv_transpose2d_forward(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(y.dims(), (1, 3, 8, 8));
    }

    #[test]
    fn one_hot_weight_is_a_zero_stuffed_copy() {
        // Stride 2, kernel 2, no padding, weight 1 at kernel (0,0): every
        // input pixel lands untouched on output (2*ih, 2*iw), an exact
        // zero-stuffed copy verified against a scatter oracle.
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (2, 2),
            stride: (2, 2),
            pad_mode: PadMode::Zero,
            pad: 0,
            has_bias: false,
        };
        let x = Tensor4::from_fn((1, 1, 3, 3), |_, _, h, w| (h * 3 + w + 1) as f32);
        let mut wt = Tensor4::zeros(spec.deconv_weight_dims());
        *wt.at_mut(0, 0, 0, 0) = 1.0;
        let y = conv_transpose2d_forward(&x, &spec, &wt, None).unwrap();

        // Scatter oracle: out[ih*s + kr][iw*s + kc] += w[kr][kc] * x[ih][iw].
        let mut oracle = Tensor4::zeros((1, 1, 6, 6));
        for ih in 0..3 {
            for iw in 0..3 {
                for kr in 0..2 {
                    for kc in 0..2 {
                        *oracle.at_mut(0, 0, ih * 2 + kr, iw * 2 + kc) +=
                            wt.at(0, 0, kr, kc) * x.at(0, 0, ih, iw);
                    }
                }
            }
        }
        assert_eq!(y.data(), oracle.data());
        assert_eq!(y.at(0, 0, 2, 4), x.at(0, 0, 1, 2));
        assert_eq!(y.at(0, 0, 1, 1), 0.0);
    }

    #[test]
    fn rejects_reflect_padding() {
        let mut spec = decoder_spec(1, 1);
        spec.pad_mode = PadMode::Reflect;
        let x = Tensor4::zeros((1, 1, 4, 4));
        let w = Tensor4::zeros(spec.deconv_weight_dims());
        assert!(conv_transpose2d_forward(&x, &spec, &w, Some(&[0.0])).is_err());
    }

    #[test]
    fn rejects_degenerate_output_dims() {
        // kernel 1, stride 1, pad 1 would shrink a 1x1 input to nothing.
        let spec = ConvSpec::new(1, 1, 1, 1, PadMode::Zero, 1, false);
        let x = Tensor4::zeros((1, 1, 1, 1));
        let w = Tensor4::zeros(spec.deconv_weight_dims());
        assert!(conv_transpose2d_forward(&x, &spec, &w, None).is_err());
    }
}
