//! Deterministic layer engine: forward and gradient computation for every
//! layer the model needs, plus the Adam optimizer.
//!
//! All functions are pure with respect to their tensor inputs (batch norm
//! running statistics are the one explicitly mutable piece of state) and
//! bit-reproducible for a fixed thread configuration.

mod act;
mod adam;
mod conv;
mod deconv;
mod init;
mod layers;
mod loss;
mod norm;

pub use act::{
    adaptive_avgpool, adaptive_avgpool_backward, avgpool_3x3_s1_reflect, maxpool_3x3_s2,
    maxpool_backward, relu, relu_backward, MaxPoolCache,
};
pub use adam::{AdamHyper, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use deconv::{conv_transpose2d_backward, conv_transpose2d_forward, DeconvGrads};
pub use init::{kaiming_conv_weight, kaiming_deconv_weight};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d};
pub use loss::mse_loss;
pub use norm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache, BnGrads};

use std::collections::BTreeMap;

use crate::tensor::Tensor4;

/// Gradient tensors keyed by parameter name. Iteration order is the sorted
/// name order, which keeps every downstream consumer deterministic.
#[derive(Debug, Default, Clone)]
pub struct GradStore {
    grads: BTreeMap<String, Tensor4>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor4) {
        let name = name.into();
        debug_assert!(!self.grads.contains_key(&name), "duplicate gradient {name}");
        self.grads.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4> {
        self.grads.get(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor4)> {
        self.grads.iter()
    }
}
