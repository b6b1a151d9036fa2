//! Mean squared error over every batch/channel/pixel entry.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Returns the scalar loss and its gradient w.r.t. `pred`:
/// `2 * (pred - target) / (B*C*H*W)`. The reduction runs in f64.
pub fn mse_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "mse between {:?} and {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse over an empty tensor".into()));
    }
    let inv_n = 1.0f64 / pred.len() as f64;
    let mut acc = 0.0f64;
    let mut grad = Tensor4::zeros(pred.dims());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p as f64 - t as f64;
        acc += d * d;
        *g = (2.0 * d * inv_n) as f32;
    }
    Ok((acc * inv_n, grad))
}
