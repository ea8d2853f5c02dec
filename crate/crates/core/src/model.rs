//! Model container and MIMO convolution algebra.
//!
//! A layer maps an `m`-channel signal to an `n`-channel signal through an
//! `n x m` grid of `a x b` kernels under valid (un-padded, stride-1)
//! correlation; dense layers are the `a = b = 1` special case. Networks are
//! plain chains of such layers with ReLU or identity activations, evaluated
//! in f64 throughout so that quantization noise is always measurable above
//! arithmetic noise.

use crate::error::{Error, Result};

/// Per-layer activation. The last layer of a network is conventionally
/// `Identity` (outputs are treated as logits).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Identity => v,
        }
    }

    /// Derivative convention: ReLU'(0) = 0.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Shape of one multi-channel signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Layer dimensions: `n` output channels, `m` input channels, `a x b` kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub n: usize,
    pub m: usize,
    pub a: usize,
    pub b: usize,
}

impl LayerDims {
    pub fn new(n: usize, m: usize, a: usize, b: usize) -> Self {
        LayerDims { n, m, a, b }
    }

    /// Number of weight scalars, `n*m*a*b`.
    pub fn weight_count(&self) -> usize {
        self.n * self.m * self.a * self.b
    }

    pub fn kernel_len(&self) -> usize {
        self.a * self.b
    }

    pub fn is_dense(&self) -> bool {
        self.a == 1 && self.b == 1
    }
}

impl std::fmt::Display for LayerDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{} of {}x{}", self.n, self.m, self.a, self.b)
    }
}

/// Weights of one layer, stored row-major in `(n, m, a, b)` order, plus an
/// optional per-output-channel bias (zeros when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    dims: LayerDims,
    data: Vec<f64>,
    bias: Vec<f64>,
}

impl WeightTensor {
    pub fn new(dims: LayerDims, data: Vec<f64>) -> Result<Self> {
        Self::with_bias(dims, data, vec![0.0; dims.n])
    }

    pub fn with_bias(dims: LayerDims, data: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if dims.n == 0 || dims.m == 0 || dims.a == 0 || dims.b == 0 {
            return Err(Error::InvalidParam(format!(
                "layer dimensions must be >= 1, got {dims}"
            )));
        }
        if data.len() != dims.weight_count() {
            return Err(Error::shape(
                "weight tensor",
                format!("{} values", dims.weight_count()),
                format!("{} values", data.len()),
            ));
        }
        if bias.len() != dims.n {
            return Err(Error::shape(
                "bias",
                format!("{} values", dims.n),
                format!("{} values", bias.len()),
            ));
        }
        if data.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight tensor".into()));
        }
        Ok(WeightTensor { dims, data, bias })
    }

    pub fn dims(&self) -> LayerDims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_count(&self) -> usize {
        self.dims.weight_count()
    }

    #[inline]
    pub fn index(&self, k: usize, j: usize, u: usize, v: usize) -> usize {
        ((k * self.dims.m + j) * self.dims.a + u) * self.dims.b + v
    }

    #[inline]
    pub fn at(&self, k: usize, j: usize, u: usize, v: usize) -> f64 {
        self.data[self.index(k, j, u, v)]
    }

    /// Largest absolute weight value.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Output shape under valid correlation, or an error naming the mismatch.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let d = self.dims;
        if input.channels != d.m || input.height < d.a || input.width < d.b {
            return Err(Error::shape(
                "conv input",
                format!("channels {} and spatial >= {}x{}", d.m, d.a, d.b),
                input.to_string(),
            ));
        }
        Ok(Shape::new(
            d.n,
            input.height - d.a + 1,
            input.width - d.b + 1,
        ))
    }
}

/// A batch of equally-shaped multi-channel signals, row-major in
/// `(sample, channel, y, x)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    count: usize,
    shape: Shape,
    data: Vec<f64>,
}

impl SignalBatch {
    pub fn new(count: usize, shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != count * shape.len() {
            return Err(Error::shape(
                "signal batch",
                format!("{} values", count * shape.len()),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal batch".into()));
        }
        Ok(SignalBatch { count, shape, data })
    }

    pub fn zeros(count: usize, shape: Shape) -> Self {
        SignalBatch {
            count,
            shape,
            data: vec![0.0; count * shape.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        let len = self.shape.len();
        &self.data[s * len..(s + 1) * len]
    }

    pub fn sample_mut(&mut self, s: usize) -> &mut [f64] {
        let len = self.shape.len();
        &mut self.data[s * len..(s + 1) * len]
    }

    /// Index of `(channel, y, x)` within one sample.
    #[inline]
    pub fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }
}

/// Valid correlation of one multi-channel sample by one layer, accumulating
/// into `out` (which must be zeroed by the caller, sized `dims.n * oh * ow`).
fn conv_sample(layer: &WeightTensor, input: &[f64], ish: Shape, out: &mut [f64], osh: Shape) {
    let d = layer.dims();
    for k in 0..d.n {
        for j in 0..d.m {
            let kernel = &layer.data[layer.index(k, j, 0, 0)..layer.index(k, j, 0, 0) + d.a * d.b];
            let plane = &input[j * ish.height * ish.width..(j + 1) * ish.height * ish.width];
            for p in 0..osh.height {
                for q in 0..osh.width {
                    let mut acc = 0.0;
                    for u in 0..d.a {
                        let row = &plane[(p + u) * ish.width + q..(p + u) * ish.width + q + d.b];
                        let krow = &kernel[u * d.b..(u + 1) * d.b];
                        for v in 0..d.b {
                            acc += krow[v] * row[v];
                        }
                    }
                    out[(k * osh.height + p) * osh.width + q] += acc;
                }
            }
        }
        let base = k * osh.height * osh.width;
        let bias = layer.bias[k];
        if bias != 0.0 {
            for o in &mut out[base..base + osh.height * osh.width] {
                *o += bias;
            }
        }
    }
}

/// Valid correlation of a whole batch: `out_k = sum_j theta_kj * x_j + bias_k`.
pub fn conv_forward(layer: &WeightTensor, input: &SignalBatch) -> Result<SignalBatch> {
    let osh = layer.output_shape(input.shape())?;
    let mut out = SignalBatch::zeros(input.count(), osh);
    for s in 0..input.count() {
        let src = input.sample(s);
        let ish = input.shape();
        conv_sample(layer, src, ish, out.sample_mut(s), osh);
    }
    Ok(out)
}

/// A feed-forward chain of layers with per-layer activations.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<(WeightTensor, Activation)>,
    input_shape: Shape,
}

impl Network {
    /// Builds a network, checking that adjacent layers are shape-compatible
    /// under valid correlation from `input_shape`.
    pub fn new(layers: Vec<(WeightTensor, Activation)>, input_shape: Shape) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParam("network needs at least one layer".into()));
        }
        let mut shape = input_shape;
        for (i, (layer, _)) in layers.iter().enumerate() {
            shape = layer.output_shape(shape).map_err(|_| {
                Error::shape(
                    format!("layer {i}"),
                    format!(
                        "input channels {} and spatial >= {}x{}",
                        layer.dims().m,
                        layer.dims().a,
                        layer.dims().b
                    ),
                    shape.to_string(),
                )
            })?;
        }
        Ok(Network {
            layers,
            input_shape,
        })
    }

    /// Standard chain: ReLU after every layer except the last (identity).
    pub fn relu_chain(layers: Vec<WeightTensor>, input_shape: Shape) -> Result<Self> {
        let last = layers.len().saturating_sub(1);
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                (l, act)
            })
            .collect();
        Network::new(layers, input_shape)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layer(&self, l: usize) -> &WeightTensor {
        &self.layers[l].0
    }

    pub fn activation(&self, l: usize) -> Activation {
        self.layers[l].1
    }

    pub fn layers(&self) -> &[(WeightTensor, Activation)] {
        &self.layers
    }

    /// Replaces the weights of layer `l`, keeping its activation. The new
    /// tensor must have the same dimensions.
    pub fn with_layer(&self, l: usize, weights: WeightTensor) -> Result<Network> {
        if weights.dims() != self.layers[l].0.dims() {
            return Err(Error::shape(
                format!("layer {l} replacement"),
                self.layers[l].0.dims().to_string(),
                weights.dims().to_string(),
            ));
        }
        let mut net = self.clone();
        net.layers[l].0 = weights;
        Ok(net)
    }

    /// Shape of the signal entering layer `l` (layer 0 sees the input shape).
    pub fn shape_at(&self, l: usize) -> Shape {
        let mut shape = self.input_shape;
        for (layer, _) in &self.layers[..l] {
            shape = layer.output_shape(shape).expect("validated at construction");
        }
        shape
    }

    pub fn output_shape(&self) -> Shape {
        self.shape_at(self.layers.len())
    }

    /// Total weight scalars across layers (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|(l, _)| l.weight_count()).sum()
    }

    pub fn forward(&self, x: &SignalBatch) -> Result<SignalBatch> {
        self.forward_from(0, x)
    }

    /// Evaluates layers `l..` on a signal already propagated to layer `l`.
    /// Lets the rate-distortion search reuse cached prefix activations.
    pub fn forward_from(&self, l: usize, x: &SignalBatch) -> Result<SignalBatch> {
        if x.shape() != self.shape_at(l) {
            return Err(Error::shape(
                format!("forward_from layer {l}"),
                self.shape_at(l).to_string(),
                x.shape().to_string(),
            ));
        }
        let mut cur = x.clone();
        for (layer, act) in &self.layers[l..] {
            let mut next = conv_forward(layer, &cur)?;
            if *act == Activation::Relu {
                for v in &mut next.data {
                    *v = act.apply(*v);
                }
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Activations entering every layer, plus the final output. Entry `l` is
    /// the input to layer `l`; entry `len()` is the network output.
    pub fn activations(&self, x: &SignalBatch) -> Result<Vec<SignalBatch>> {
        if x.shape() != self.input_shape {
            return Err(Error::shape(
                "network input",
                self.input_shape.to_string(),
                x.shape().to_string(),
            ));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (layer, act) in &self.layers {
            let mut next = conv_forward(layer, acts.last().unwrap())?;
            if *act == Activation::Relu {
                for v in &mut next.data {
                    *v = act.apply(*v);
                }
            }
            acts.push(next);
        }
        Ok(acts)
    }
}

/// Mean over calibration samples of the squared Euclidean norm of the output
/// difference between two architecturally identical networks.
pub fn output_distortion(
    reference: &Network,
    quantized: &Network,
    calib: &SignalBatch,
) -> Result<f64> {
    if calib.count() == 0 {
        return Err(Error::EmptyBatch);
    }
    let y = reference.forward(calib)?;
    let yq = quantized.forward(calib)?;
    Ok(batch_sq_distance(&y, &yq))
}

/// Mean over samples of the squared distance between two equal-shape batches.
pub fn batch_sq_distance(a: &SignalBatch, b: &SignalBatch) -> f64 {
    debug_assert_eq!(a.data.len(), b.data.len());
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    sum / a.count() as f64
}
