//! Post-training compression of neural-network weights by transform
//! quantization.
//!
//! The pipeline decorrelates each layer's weights with a KLT or ELT
//! transform, searches quantizer step-sizes against network output
//! distortion, allocates bit-depths to row/column blocks by Lagrangian
//! optimization, and serializes the result as a bit-packed container. A
//! theory module validates the high-rate distortion predictions the bit
//! allocation relies on, by Monte Carlo on synthetic Gaussian sources.

pub mod codec;
pub mod covariance;
pub mod error;
pub mod grad;
pub mod model;
pub mod quant;
pub mod rdopt;
pub mod rng;
pub mod theory;
pub mod toy;
pub mod transform;

pub use covariance::{Axis, CovariancePair};
pub use error::{Error, Result};
pub use model::{Activation, LayerDims, Network, Shape, SignalBatch, WeightTensor};
pub use quant::QuantParams;
pub use transform::{TransformKind, TransformPlan};
