//! Weight initialization: Kaiming-style fan-in normal scaling, fully
//! reproducible from the stream that is passed in.

use crate::rng::Rng;
use crate::tensor::Tensor4;

fn normal_tensor(dims: (usize, usize, usize, usize), std: f64, rng: &mut Rng) -> Tensor4 {
    let (a, b, c, d) = dims;
    let mut data = Vec::with_capacity(a * b * c * d);
    for _ in 0..a * b * c * d {
        data.push((rng.normal() * std) as f32);
    }
    Tensor4::new(dims, data).expect("dims/data agree by construction")
}

/// Conv weights (out, in, rows, cols): std = sqrt(2 / (in*rows*cols)).
pub fn kaiming_conv_weight(dims: (usize, usize, usize, usize), rng: &mut Rng) -> Tensor4 {
    let (_, in_c, p, q) = dims;
    let fan_in = (in_c * p * q) as f64;
    normal_tensor(dims, (2.0 / fan_in).sqrt(), rng)
}

/// Transposed-conv weights (in, out, rows, cols): fan-in is taken on the
/// producing side, std = sqrt(2 / (in*rows*cols)).
pub fn kaiming_deconv_weight(dims: (usize, usize, usize, usize), rng: &mut Rng) -> Tensor4 {
    let (in_c, _, p, q) = dims;
    let fan_in = (in_c * p * q) as f64;
    normal_tensor(dims, (2.0 / fan_in).sqrt(), rng)
}
