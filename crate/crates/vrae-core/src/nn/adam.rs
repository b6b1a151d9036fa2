//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

use super::GradStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moments plus the step counter. Moments are
/// created zeroed the first time a parameter is seen.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    step: u64,
    moments: BTreeMap<String, (Tensor4, Tensor4)>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        AdamState { hyper, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Restores a moment pair (checkpoint loading).
    pub fn insert_moments(&mut self, name: impl Into<String>, m: Tensor4, v: Tensor4) {
        self.moments.insert(name.into(), (m, v));
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn moments(&self) -> impl Iterator<Item = (&String, &(Tensor4, Tensor4))> {
        self.moments.iter()
    }

    /// One optimizer step. `visit_params` must call its argument once per
    /// trainable parameter; every visited parameter must have a gradient
    /// in `grads` with an identical shape.
    pub fn step(
        &mut self,
        grads: &GradStore,
        visit_params: impl FnOnce(&mut dyn FnMut(&str, &mut Tensor4)),
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let corr1 = 1.0 - (self.hyper.beta1 as f64).powi(t);
        let corr2 = 1.0 - (self.hyper.beta2 as f64).powi(t);
        let (lr, b1, b2, eps) = (
            self.hyper.lr,
            self.hyper.beta1,
            self.hyper.beta2,
            self.hyper.epsilon,
        );
        let mut failure: Option<Error> = None;

        visit_params(&mut |name, param| {
            if failure.is_some() {
                return;
            }
            let Some(grad) = grads.get(name) else {
                failure = Some(Error::Config(format!("missing gradient for parameter {name}")));
                return;
            };
            if grad.dims() != param.dims() {
                failure = Some(Error::Shape(format!(
                    "gradient {:?} vs parameter {:?} for {name}",
                    grad.dims(),
                    param.dims()
                )));
                return;
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor4::zeros(param.dims()), Tensor4::zeros(param.dims())));
            for ((p, &g), (m, v)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = (*m as f64 / corr1) as f32;
                let v_hat = (*v as f64 / corr2) as f32;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });

        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
