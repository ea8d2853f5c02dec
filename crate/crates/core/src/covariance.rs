//! Cross-channel covariance estimation for weights and output gradients.
//!
//! A layer is matricized along one of two axes: `Column` flattens each output
//! channel into a row (channels = n, vector length = m*a*b), `Row` flattens
//! each input channel (channels = m, vector length = n*a*b). Transforms act
//! on the channel dimension of the matricized view.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grad::backward_weight_grad;
use crate::model::{LayerDims, Network, SignalBatch};
use crate::model::WeightTensor;
use crate::rng::substream;

/// Matricization axis: which channel dimension the transform decorrelates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Transform across output channels: `T = U^t Theta`.
    Column,
    /// Transform across input channels: `T = Theta U`.
    Row,
}

impl Axis {
    /// Number of channels in the matricized view.
    pub fn channels(&self, dims: LayerDims) -> usize {
        match self {
            Axis::Column => dims.n,
            Axis::Row => dims.m,
        }
    }

    /// Length of each channel vector in the matricized view.
    pub fn vector_len(&self, dims: LayerDims) -> usize {
        match self {
            Axis::Column => dims.m * dims.a * dims.b,
            Axis::Row => dims.n * dims.a * dims.b,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Column => write!(f, "col"),
            Axis::Row => write!(f, "row"),
        }
    }
}

/// Reshapes raw `(n, m, a, b)` weight data into a channels-by-length matrix.
pub fn matricize_data(data: &[f64], dims: LayerDims, axis: Axis) -> DMatrix<f64> {
    let ch = axis.channels(dims);
    let len = axis.vector_len(dims);
    let kl = dims.a * dims.b;
    let mut mat = DMatrix::zeros(ch, len);
    match axis {
        Axis::Column => {
            // Row k is the row-major (m, a, b) slice of output channel k.
            for k in 0..ch {
                for c in 0..len {
                    mat[(k, c)] = data[k * len + c];
                }
            }
        }
        Axis::Row => {
            for j in 0..dims.m {
                for k in 0..dims.n {
                    for t in 0..kl {
                        mat[(j, k * kl + t)] = data[(k * dims.m + j) * kl + t];
                    }
                }
            }
        }
    }
    mat
}

pub fn matricize(layer: &WeightTensor, axis: Axis) -> DMatrix<f64> {
    matricize_data(layer.data(), layer.dims(), axis)
}

/// Inverse of [`matricize_data`]: recovers the row-major weight data.
pub fn dematricize(mat: &DMatrix<f64>, dims: LayerDims, axis: Axis) -> Vec<f64> {
    let len = axis.vector_len(dims);
    let kl = dims.a * dims.b;
    let mut data = vec![0.0; dims.weight_count()];
    match axis {
        Axis::Column => {
            for k in 0..dims.n {
                for c in 0..len {
                    data[k * len + c] = mat[(k, c)];
                }
            }
        }
        Axis::Row => {
            for j in 0..dims.m {
                for k in 0..dims.n {
                    for t in 0..kl {
                        data[(k * dims.m + j) * kl + t] = mat[(j, k * kl + t)];
                    }
                }
            }
        }
    }
    data
}

/// Weight covariance `(1/len) M M^t` of the matricized layer.
pub fn weight_covariance(layer: &WeightTensor, axis: Axis) -> DMatrix<f64> {
    let mat = matricize(layer, axis);
    let len = mat.ncols();
    let mut c = &mat * mat.transpose() / len as f64;
    symmetrize(&mut c);
    c
}

/// How gradient covariance is estimated.
#[derive(Debug, Clone, Copy)]
pub struct GradConfig {
    /// Exact per-coordinate backpropagation when the output dimension is at
    /// most this; random probing above it.
    pub exact_limit: usize,
    /// Probe count for the randomized estimator.
    pub probes: usize,
    /// Seed for probe directions.
    pub seed: u64,
}

impl Default for GradConfig {
    fn default() -> Self {
        GradConfig {
            exact_limit: 256,
            probes: 32,
            seed: 0x9e3779b9,
        }
    }
}

/// Gradient covariance: sum over matricized columns of per-channel gradient
/// outer products, summed over output coordinates and averaged over the
/// calibration batch.
///
/// Exact when the output dimension is small; otherwise estimated with
/// Gaussian probes `v` via gradients of `v . y`, which match in expectation.
pub fn gradient_covariance(
    net: &Network,
    layer_index: usize,
    calib: &SignalBatch,
    axis: Axis,
    cfg: &GradConfig,
) -> Result<DMatrix<f64>> {
    if calib.count() == 0 {
        return Err(Error::EmptyBatch);
    }
    if layer_index >= net.len() {
        return Err(Error::InvalidParam(format!(
            "layer index {layer_index} out of range for {}-layer network",
            net.len()
        )));
    }
    let acts = net.activations(calib)?;
    let dims = net.layer(layer_index).dims();
    let ch = axis.channels(dims);
    let out_len = net.output_shape().len();
    let exact = out_len <= cfg.exact_limit;

    // Per-sample accumulation runs in parallel; the final sum is taken in
    // sample order so totals do not depend on the worker count.
    let partials: Vec<DMatrix<f64>> = (0..calib.count())
        .into_par_iter()
        .map(|s| {
            let mut c = DMatrix::zeros(ch, ch);
            if exact {
                let mut cot = vec![0.0; out_len];
                for i in 0..out_len {
                    cot[i] = 1.0;
                    let dw = backward_weight_grad(net, &acts, s, &cot, layer_index);
                    cot[i] = 0.0;
                    let g = matricize_data(&dw, dims, axis);
                    c.gemm(1.0, &g, &g.transpose(), 1.0);
                }
            } else {
                use rand_distr::{Distribution, StandardNormal};
                for probe in 0..cfg.probes {
                    let mut rng = substream(cfg.seed, (s * cfg.probes + probe) as u64);
                    let cot: Vec<f64> = (0..out_len)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    let dw = backward_weight_grad(net, &acts, s, &cot, layer_index);
                    let g = matricize_data(&dw, dims, axis);
                    c.gemm(1.0 / cfg.probes as f64, &g, &g.transpose(), 1.0);
                }
            }
            c
        })
        .collect();

    let mut total = DMatrix::zeros(ch, ch);
    for p in partials {
        total += p;
    }
    total /= calib.count() as f64;
    symmetrize(&mut total);
    Ok(total)
}

/// Adds a trace-scaled ridge: `C + ridge * trace(C)/dim * I`.
pub fn regularize(c: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if ridge < 0.0 {
        return Err(Error::InvalidParam(format!("ridge must be >= 0, got {ridge}")));
    }
    if ridge == 0.0 {
        return Ok(c.clone());
    }
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let dim = c.nrows();
    let shift = ridge * c.trace() / dim as f64;
    let mut out = c.clone();
    for i in 0..dim {
        out[(i, i)] += shift;
    }
    Ok(out)
}

/// Weight and (regularized) gradient covariances of one layer under one axis.
#[derive(Debug, Clone)]
pub struct CovariancePair {
    pub weights: DMatrix<f64>,
    pub gradients: DMatrix<f64>,
}

/// Estimates both covariances of a layer, ridging the gradient side so that
/// downstream factorization never sees a singular matrix.
pub fn layer_covariances(
    net: &Network,
    layer_index: usize,
    calib: &SignalBatch,
    axis: Axis,
    ridge: f64,
    cfg: &GradConfig,
) -> Result<CovariancePair> {
    let weights = weight_covariance(net.layer(layer_index), axis);
    let gradients = gradient_covariance(net, layer_index, calib, axis, cfg)?;
    let gradients = regularize(&gradients, ridge)?;
    Ok(CovariancePair { weights, gradients })
}

pub(crate) fn symmetrize(c: &mut DMatrix<f64>) {
    let n = c.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
}
