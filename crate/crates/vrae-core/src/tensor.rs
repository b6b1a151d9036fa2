//! Rank-4 tensors and convolution geometry.
//!
//! `Tensor4` is the universal value type of the crate: images, feature
//! maps, weights and gradients are all `(n, c, h, w)` arrays of `f32` in
//! row-major n -> c -> h -> w order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn new(dims: (usize, usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        let (n, c, h, w) = dims;
        let expected = n * c * h * w;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor ({n},{c},{h},{w}) needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn zeros(dims: (usize, usize, usize, usize)) -> Self {
        let (n, c, h, w) = dims;
        Tensor4 { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn filled(dims: (usize, usize, usize, usize), value: f32) -> Self {
        let (n, c, h, w) = dims;
        Tensor4 { n, c, h, w, data: vec![value; n * c * h * w] }
    }

    pub fn from_fn(
        dims: (usize, usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let (n, c, h, w) = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for in_ in 0..n {
            for ic in 0..c {
                for ih in 0..h {
                    for iw in 0..w {
                        data.push(f(in_, ic, ih, iw));
                    }
                }
            }
        }
        Tensor4 { n, c, h, w, data }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut f32 {
        let i = self.idx(n, c, h, w);
        &mut self.data[i]
    }

    /// The contiguous `h*w` slice for one (image, channel) plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor4 {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise sum; the shapes must match exactly.
    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "elementwise add of {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor4 { n: self.n, c: self.c, h: self.h, w: self.w, data })
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "elementwise add of {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(&self) -> Tensor4 {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Maximum absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor4) -> f32 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// How the border of an input is extended before a convolution or pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample: `[b a | a b c | c b]` is
    /// NOT produced; `[b | a b c | b]` is (pad 1).
    Reflect,
}

/// Geometry of a convolution (or transposed convolution) layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel rows, cols.
    pub kernel: (usize, usize),
    /// Stride rows, cols.
    pub stride: (usize, usize),
    pub pad_mode: PadMode,
    pub pad: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad_mode: PadMode,
        pad: usize,
        has_bias: bool,
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            pad_mode,
            pad,
            has_bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 < 1 || self.kernel.1 < 1 {
            return Err(Error::Config(format!("kernel {:?} must be >= 1", self.kernel)));
        }
        if self.stride.0 < 1 || self.stride.1 < 1 {
            return Err(Error::Config(format!("stride {:?} must be >= 1", self.stride)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Output spatial dims of a forward convolution:
    /// `floor((h + 2*pad - kernel)/stride) + 1`, identical for both pad modes.
    pub fn conv_out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (p, q) = self.kernel;
        let (sh, sw) = self.stride;
        let he = h + 2 * self.pad;
        let we = w + 2 * self.pad;
        if he < p {
            return Err(Error::Shape(format!(
                "input height {h} with pad {} is smaller than kernel rows {p}",
                self.pad
            )));
        }
        if we < q {
            return Err(Error::Shape(format!(
                "input width {w} with pad {} is smaller than kernel cols {q}",
                self.pad
            )));
        }
        Ok(((he - p) / sh + 1, (we - q) / sw + 1))
    }

    /// Output spatial dims of a transposed convolution:
    /// `(h - 1)*stride - 2*pad + kernel`.
    pub fn deconv_out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (p, q) = self.kernel;
        let (sh, sw) = self.stride;
        let oh = (h - 1) * sh + p;
        let ow = (w - 1) * sw + q;
        if h == 0 || w == 0 || oh < 2 * self.pad + 1 || ow < 2 * self.pad + 1 {
            return Err(Error::Shape(format!(
                "transposed conv on {h}x{w} with kernel {:?} stride {:?} pad {} yields no output",
                self.kernel, self.stride, self.pad
            )));
        }
        Ok((oh - 2 * self.pad, ow - 2 * self.pad))
    }

    /// Expected weight dims for a forward conv: (out, in, rows, cols).
    pub fn conv_weight_dims(&self) -> (usize, usize, usize, usize) {
        (self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    /// Expected weight dims for a transposed conv: (in, out, rows, cols).
    pub fn deconv_weight_dims(&self) -> (usize, usize, usize, usize) {
        (self.in_channels, self.out_channels, self.kernel.0, self.kernel.1)
    }
}
