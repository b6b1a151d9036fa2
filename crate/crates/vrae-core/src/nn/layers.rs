//! Parameter-owning layer wrappers around the functional kernels. These are
//! what the model assembles; the checkpoint and optimizer see their tensors
//! through the model's named-parameter visitors.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{ConvSpec, Tensor4};

use super::conv::{conv2d_backward, conv2d_forward, ConvGrads};
use super::deconv::{conv_transpose2d_backward, conv_transpose2d_forward, DeconvGrads};
use super::init::{kaiming_conv_weight, kaiming_deconv_weight};
use super::norm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache, BnGrads};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: Tensor4,
    /// dims (1, out_channels, 1, 1) when present.
    pub bias: Option<Tensor4>,
}

impl Conv2d {
    pub fn init(spec: ConvSpec, rng: &mut Rng) -> Self {
        let weight = kaiming_conv_weight(spec.conv_weight_dims(), rng);
        let bias = spec.has_bias.then(|| Tensor4::zeros((1, spec.out_channels, 1, 1)));
        Conv2d { spec, weight, bias }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        conv2d_forward(x, &self.spec, &self.weight, self.bias.as_ref().map(|b| b.data()))
    }

    pub fn backward(&self, x: &Tensor4, upstream: &Tensor4) -> Result<ConvGrads> {
        conv2d_backward(x, &self.spec, &self.weight, upstream)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor4::len)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub spec: ConvSpec,
    pub weight: Tensor4,
    pub bias: Option<Tensor4>,
}

impl ConvTranspose2d {
    pub fn init(spec: ConvSpec, rng: &mut Rng) -> Self {
        let weight = kaiming_deconv_weight(spec.deconv_weight_dims(), rng);
        let bias = spec.has_bias.then(|| Tensor4::zeros((1, spec.out_channels, 1, 1)));
        ConvTranspose2d { spec, weight, bias }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        conv_transpose2d_forward(x, &self.spec, &self.weight, self.bias.as_ref().map(|b| b.data()))
    }

    pub fn backward(&self, x: &Tensor4, upstream: &Tensor4) -> Result<DeconvGrads> {
        conv_transpose2d_backward(x, &self.spec, &self.weight, upstream)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor4::len)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    /// All four are (1, channels, 1, 1).
    pub gamma: Tensor4,
    pub beta: Tensor4,
    pub running_mean: Tensor4,
    pub running_var: Tensor4,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor4::filled((1, channels, 1, 1), 1.0),
            beta: Tensor4::zeros((1, channels, 1, 1)),
            running_mean: Tensor4::zeros((1, channels, 1, 1)),
            running_var: Tensor4::filled((1, channels, 1, 1), 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> Result<(Tensor4, BnCache)> {
        let gamma: Vec<f32> = self.gamma.data().to_vec();
        let beta: Vec<f32> = self.beta.data().to_vec();
        batchnorm_train(
            x,
            &gamma,
            &beta,
            self.running_mean.data_mut(),
            self.running_var.data_mut(),
            self.eps,
            self.momentum,
        )
    }

    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        batchnorm_eval(
            x,
            self.gamma.data(),
            self.beta.data(),
            self.running_mean.data(),
            self.running_var.data(),
            self.eps,
        )
    }

    pub fn backward(&self, cache: &BnCache, upstream: &Tensor4) -> Result<BnGrads> {
        batchnorm_backward(cache, self.gamma.data(), upstream)
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}
