//! Seeded synthetic networks and calibration data.
//!
//! Test fixtures and the `gen-toy` CLI subcommand share these generators, so
//! every experiment in the repository is reproducible from a seed. Weights
//! are fan-in scaled Gaussians, optionally given AR(1) correlation across
//! input or output channels (the structure decorrelating transforms exploit).

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::{dematricize, Axis};
use crate::error::Result;
use crate::model::{LayerDims, Network, Shape, SignalBatch, WeightTensor};
use crate::rng::Rng;

/// Channel correlation imposed on generated weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    White,
    /// AR(1) with the given coefficient across input channels (what row
    /// transforms decorrelate).
    Ar1Input { rho: f64 },
    /// AR(1) across output channels (what column transforms decorrelate).
    Ar1Output { rho: f64 },
}

/// Symmetric square root of the AR(1) Toeplitz covariance `rho^|i-j|`.
pub fn ar1_sqrt(dim: usize, rho: f64) -> DMatrix<f64> {
    let c = DMatrix::from_fn(dim, dim, |i, j| rho.powi((i as i32 - j as i32).abs()));
    let eig = nalgebra::SymmetricEigen::new(c);
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * sqrt * eig.eigenvectors.transpose()
}

fn gaussian_vec(rng: &mut Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// White Gaussian layer with standard deviation `scale / sqrt(fan_in)`.
pub fn random_layer(rng: &mut Rng, dims: LayerDims, scale: f64) -> WeightTensor {
    let sd = scale / ((dims.m * dims.a * dims.b) as f64).sqrt();
    WeightTensor::new(dims, gaussian_vec(rng, dims.weight_count(), sd))
        .expect("generated data matches dims")
}

/// Layer with the requested channel correlation.
pub fn correlated_layer(
    rng: &mut Rng,
    dims: LayerDims,
    correlation: Correlation,
    scale: f64,
) -> WeightTensor {
    let sd = scale / ((dims.m * dims.a * dims.b) as f64).sqrt();
    let (axis, rho) = match correlation {
        Correlation::White => return random_layer(rng, dims, scale),
        Correlation::Ar1Input { rho } => (Axis::Row, rho),
        Correlation::Ar1Output { rho } => (Axis::Column, rho),
    };
    let ch = axis.channels(dims);
    let len = axis.vector_len(dims);
    let white = DMatrix::from_fn(ch, len, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    });
    let colored = ar1_sqrt(ch, rho) * white;
    WeightTensor::new(dims, dematricize(&colored, dims, axis)).expect("shape preserved")
}

/// Gaussian calibration batch.
pub fn random_batch(rng: &mut Rng, count: usize, shape: Shape) -> SignalBatch {
    SignalBatch::new(count, shape, gaussian_vec(rng, count * shape.len(), 1.0))
        .expect("generated data matches shape")
}

/// Recipe for a synthetic network.
#[derive(Debug, Clone)]
pub struct ToySpec {
    pub input_shape: Shape,
    pub layers: Vec<LayerDims>,
    pub correlation: Correlation,
    pub weight_scale: f64,
    pub bias_scale: f64,
}

impl ToySpec {
    /// Three-layer conv + conv + dense chain; small output dimension, handy
    /// for exact-gradient checks.
    pub fn conv_dense() -> Self {
        ToySpec {
            input_shape: Shape::new(2, 6, 6),
            layers: vec![
                LayerDims::new(4, 2, 3, 3),
                LayerDims::new(4, 4, 3, 3),
                LayerDims::new(3, 4, 1, 1),
            ],
            correlation: Correlation::White,
            weight_scale: 1.0,
            bias_scale: 0.1,
        }
    }

    /// Three-layer conv chain with wide kernels: basis overhead stays around
    /// 5% of the weight count, the regime where transforms pay off.
    pub fn conv3(correlation: Correlation) -> Self {
        ToySpec {
            input_shape: Shape::new(6, 12, 12),
            layers: vec![
                LayerDims::new(12, 6, 5, 5),
                LayerDims::new(12, 12, 5, 5),
                LayerDims::new(8, 12, 3, 3),
            ],
            correlation,
            weight_scale: 1.0,
            bias_scale: 0.1,
        }
    }

    /// Builds the network from a seed.
    pub fn build(&self, seed: u64) -> Result<Network> {
        let mut rng = crate::rng::seeded(seed);
        let mut layers = Vec::with_capacity(self.layers.len());
        for &dims in &self.layers {
            let w = correlated_layer(&mut rng, dims, self.correlation, self.weight_scale);
            let bias = gaussian_vec(&mut rng, dims.n, self.bias_scale);
            layers.push(WeightTensor::with_bias(dims, w.data().to_vec(), bias)?);
        }
        Network::relu_chain(layers, self.input_shape)
    }

    /// Calibration batch matching the network input, from an offset stream of
    /// the same seed.
    pub fn calibration(&self, seed: u64, count: usize) -> SignalBatch {
        let mut rng = crate::rng::substream(seed, 0xCA11B);
        random_batch(&mut rng, count, self.input_shape)
    }
}
