//! Vertical residual autoencoder (VRAE) for vehicle image denoising and
//! deblurring, together with the synthetic degradation pipeline it is
//! trained against, restoration quality metrics, feature-map entropy
//! diagnostics and Pareto trade-off analysis.
//!
//! The crate is self-contained: a small deterministic tensor/layer engine
//! (`tensor`, `nn`), the model assembly (`model`), dataset preparation and
//! degradation (`data`), the training loop and checkpoint format
//! (`trainer`), quality metrics (`metrics`) and the entropy/Pareto
//! analysis tools (`analysis`). Everything is reproducible bit-for-bit
//! from a seed for a fixed thread configuration.

pub mod analysis;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod svg;
pub mod tensor;
pub mod threading;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, PadMode, Tensor4};
