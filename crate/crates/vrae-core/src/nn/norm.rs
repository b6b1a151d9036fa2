//! Batch normalization over (n, h, w) per channel.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// What the backward pass needs from a training-mode forward.
#[derive(Debug)]
pub struct BnCache {
    pub xhat: Tensor4,
    pub invstd: Vec<f32>,
}

#[derive(Debug)]
pub struct BnGrads {
    /// dims (1, c, 1, 1)
    pub gamma: Tensor4,
    /// dims (1, c, 1, 1)
    pub beta: Tensor4,
    pub input: Tensor4,
}

fn check_params(x: &Tensor4, gamma: &[f32], beta: &[f32]) -> Result<usize> {
    let (n, c, h, w) = x.dims();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "gamma/beta length {}/{} must equal channel count {c}",
            gamma.len(),
            beta.len()
        )));
    }
    let count = n * h * w;
    if count == 0 {
        return Err(Error::Empty("batch norm over an empty batch".into()));
    }
    Ok(count)
}

/// Training mode: normalize with the batch statistics (biased variance,
/// epsilon inside the square root) and update the running statistics with
/// `momentum` (running variance uses the unbiased estimate).
pub fn batchnorm_train(
    x: &Tensor4,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
    eps: f32,
    momentum: f32,
) -> Result<(Tensor4, BnCache)> {
    let count = check_params(x, gamma, beta)?;
    let (n, c, h, w) = x.dims();
    let inv_count = 1.0 / count as f64;

    let mut mean = vec![0.0f32; c];
    let mut invstd = vec![0.0f32; c];
    for ic in 0..c {
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for in_ in 0..n {
            for &v in x.plane(in_, ic) {
                let v = v as f64;
                sum += v;
                sumsq += v * v;
            }
        }
        let m = sum * inv_count;
        let var = (sumsq * inv_count - m * m).max(0.0);
        mean[ic] = m as f32;
        invstd[ic] = (1.0 / (var + eps as f64).sqrt()) as f32;
        let unbiased = if count > 1 { var * count as f64 / (count - 1) as f64 } else { var };
        running_mean[ic] = (1.0 - momentum) * running_mean[ic] + momentum * m as f32;
        running_var[ic] = (1.0 - momentum) * running_var[ic] + momentum * unbiased as f32;
    }

    let mut xhat = Tensor4::zeros((n, c, h, w));
    let mut y = Tensor4::zeros((n, c, h, w));
    for in_ in 0..n {
        for ic in 0..c {
            let (m, istd, g, b) = (mean[ic], invstd[ic], gamma[ic], beta[ic]);
            let src = x.plane(in_, ic);
            let xh = xhat.plane_mut(in_, ic);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - m) * istd;
            }
            let yp = y.plane_mut(in_, ic);
            for (d, &v) in yp.iter_mut().zip(xhat.plane(in_, ic)) {
                *d = g * v + b;
            }
        }
    }
    Ok((y, BnCache { xhat, invstd }))
}

/// Evaluation mode: normalize with the running statistics only.
pub fn batchnorm_eval(
    x: &Tensor4,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
    eps: f32,
) -> Result<Tensor4> {
    check_params(x, gamma, beta)?;
    let (n, c, h, w) = x.dims();
    let mut y = Tensor4::zeros((n, c, h, w));
    for in_ in 0..n {
        for ic in 0..c {
            let istd = 1.0 / (running_var[ic] + eps).sqrt();
            let (m, g, b) = (running_mean[ic], gamma[ic], beta[ic]);
            let src = x.plane(in_, ic);
            let dst = y.plane_mut(in_, ic);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = g * (v - m) * istd + b;
            }
        }
    }
    Ok(y)
}

/// Backward through a training-mode forward, including the dependence of
/// the batch statistics on the input.
#[allow(clippy::needless_range_loop)]
pub fn batchnorm_backward(cache: &BnCache, gamma: &[f32], upstream: &Tensor4) -> Result<BnGrads> {
    let (n, c, h, w) = cache.xhat.dims();
    if upstream.dims() != (n, c, h, w) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match activations {:?}",
            upstream.dims(),
            (n, c, h, w)
        )));
    }
    let count = (n * h * w) as f64;
    let mut g_gamma = Tensor4::zeros((1, c, 1, 1));
    let mut g_beta = Tensor4::zeros((1, c, 1, 1));
    let mut g_input = Tensor4::zeros((n, c, h, w));

    for ic in 0..c {
        let mut sum_gy = 0.0f64;
        let mut sum_gy_xhat = 0.0f64;
        for in_ in 0..n {
            let gy = upstream.plane(in_, ic);
            let xh = cache.xhat.plane(in_, ic);
            for (&g, &x) in gy.iter().zip(xh) {
                sum_gy += g as f64;
                sum_gy_xhat += g as f64 * x as f64;
            }
        }
        *g_beta.at_mut(0, ic, 0, 0) = sum_gy as f32;
        *g_gamma.at_mut(0, ic, 0, 0) = sum_gy_xhat as f32;

        let scale = gamma[ic] as f64 * cache.invstd[ic] as f64 / count;
        for in_ in 0..n {
            let gy = upstream.plane(in_, ic);
            let xh = cache.xhat.plane(in_, ic);
            let gx = g_input.plane_mut(in_, ic);
            for ((d, &g), &x) in gx.iter_mut().zip(gy).zip(xh) {
                *d = (scale * (count * g as f64 - sum_gy - x as f64 * sum_gy_xhat)) as f32;
            }
        }
    }
    Ok(BnGrads { gamma: g_gamma, beta: g_beta, input: g_input })
}
