//! Reverse-mode gradients of network outputs with respect to layer weights.
//!
//! The backward pass is specialized to the chain architecture: activations
//! are recorded once per calibration batch, then any cotangent on the output
//! can be pulled back to a weight gradient for a chosen layer. ReLU uses the
//! zero subgradient at the origin.

use crate::error::{Error, Result};
use crate::model::{Activation, LayerDims, Network, Shape, SignalBatch, WeightTensor};

/// Per-sample, per-output-coordinate gradients of the network output with
/// respect to one layer's weights, stored in the same `(n, m, a, b)` layout
/// as the layer itself. Layout: `(sample, coordinate, weight)`.
#[derive(Debug, Clone)]
pub struct GradientBatch {
    samples: usize,
    coords: usize,
    dims: LayerDims,
    data: Vec<f64>,
}

impl GradientBatch {
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Number of scalar output coordinates the gradients were taken against.
    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn dims(&self) -> LayerDims {
        self.dims
    }

    /// Gradient of output coordinate `i` on sample `s`, one value per weight.
    pub fn gradient(&self, s: usize, i: usize) -> &[f64] {
        let w = self.dims.weight_count();
        let base = (s * self.coords + i) * w;
        &self.data[base..base + w]
    }
}

/// d/dtheta of `sum_i cot_i * out_i` for one layer on one sample:
/// `dtheta_kj[u,v] = sum_{p,q} g_k[p,q] * x_j[p+u, q+v]`.
fn conv_backward_weights(
    dims: LayerDims,
    input: &[f64],
    ish: Shape,
    g: &[f64],
    osh: Shape,
    out: &mut [f64],
) {
    for k in 0..dims.n {
        let gplane = &g[k * osh.height * osh.width..(k + 1) * osh.height * osh.width];
        for j in 0..dims.m {
            let xplane = &input[j * ish.height * ish.width..(j + 1) * ish.height * ish.width];
            for u in 0..dims.a {
                for v in 0..dims.b {
                    let mut acc = 0.0;
                    for p in 0..osh.height {
                        for q in 0..osh.width {
                            acc += gplane[p * osh.width + q] * xplane[(p + u) * ish.width + q + v];
                        }
                    }
                    out[((k * dims.m + j) * dims.a + u) * dims.b + v] += acc;
                }
            }
        }
    }
}

/// Pulls an output-side cotangent back through one layer:
/// `dx_j[s,t] = sum_k sum_{u,v} theta_kj[u,v] * g_k[s-u, t-v]` over valid taps.
fn conv_backward_input(layer: &WeightTensor, g: &[f64], osh: Shape, ish: Shape) -> Vec<f64> {
    let d = layer.dims();
    let mut dx = vec![0.0; ish.len()];
    for k in 0..d.n {
        let gplane = &g[k * osh.height * osh.width..(k + 1) * osh.height * osh.width];
        for j in 0..d.m {
            let xbase = j * ish.height * ish.width;
            for p in 0..osh.height {
                for q in 0..osh.width {
                    let gv = gplane[p * osh.width + q];
                    if gv == 0.0 {
                        continue;
                    }
                    for u in 0..d.a {
                        for v in 0..d.b {
                            dx[xbase + (p + u) * ish.width + q + v] += gv * layer.at(k, j, u, v);
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Pulls a cotangent on the network output back to a weight gradient for
/// `target`. `acts[l]` must be the input to layer `l` (see
/// [`Network::activations`]); `cot` has the length of one output sample.
pub(crate) fn backward_weight_grad(
    net: &Network,
    acts: &[SignalBatch],
    s: usize,
    cot: &[f64],
    target: usize,
) -> Vec<f64> {
    let mut g = cot.to_vec();
    for l in (target..net.len()).rev() {
        let osh = acts[l + 1].shape();
        // Post-activation values determine the ReLU mask; f'(0) = 0.
        if net.activation(l) == Activation::Relu {
            let post = acts[l + 1].sample(s);
            for (gv, pv) in g.iter_mut().zip(post) {
                if *pv <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let ish = acts[l].shape();
        if l == target {
            let dims = net.layer(l).dims();
            let mut dw = vec![0.0; dims.weight_count()];
            conv_backward_weights(dims, acts[l].sample(s), ish, &g, osh, &mut dw);
            return dw;
        }
        g = conv_backward_input(net.layer(l), &g, osh, ish);
    }
    unreachable!("target < net.len() checked by callers");
}

/// Exact gradients of every scalar output coordinate with respect to the
/// weights of layer `layer_index`, for every calibration sample.
///
/// Materializes `samples * N * weight_count` values; intended for small
/// output dimensions. Covariance estimation streams instead of calling this.
pub fn layer_output_gradients(
    net: &Network,
    layer_index: usize,
    x: &SignalBatch,
) -> Result<GradientBatch> {
    if layer_index >= net.len() {
        return Err(Error::InvalidParam(format!(
            "layer index {layer_index} out of range for {}-layer network",
            net.len()
        )));
    }
    let acts = net.activations(x)?;
    let out_len = net.output_shape().len();
    let dims = net.layer(layer_index).dims();
    let w = dims.weight_count();
    let mut data = vec![0.0; x.count() * out_len * w];
    let mut cot = vec![0.0; out_len];
    for s in 0..x.count() {
        for i in 0..out_len {
            cot[i] = 1.0;
            let dw = backward_weight_grad(net, &acts, s, &cot, layer_index);
            cot[i] = 0.0;
            data[(s * out_len + i) * w..(s * out_len + i + 1) * w].copy_from_slice(&dw);
        }
    }
    Ok(GradientBatch {
        samples: x.count(),
        coords: out_len,
        dims,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LayerDims, Network, Shape, SignalBatch, WeightTensor};

    #[test]
    fn dense_identity_gradient_is_broadcast_input() {
        // y_k = sum_j theta_kj x_j  =>  dy_k/dtheta_kj = x_j, zero elsewhere.
        let layer =
            WeightTensor::new(LayerDims::new(2, 3, 1, 1), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let net = Network::new(vec![(layer, Activation::Identity)], Shape::new(3, 1, 1)).unwrap();
        let x = SignalBatch::new(1, Shape::new(3, 1, 1), vec![1.5, -2.0, 0.5]).unwrap();
        let grads = layer_output_gradients(&net, 0, &x).unwrap();
        assert_eq!(grads.coords(), 2);
        let g0 = grads.gradient(0, 0);
        assert_eq!(&g0[..3], &[1.5, -2.0, 0.5]);
        assert_eq!(&g0[3..], &[0.0, 0.0, 0.0]);
        let g1 = grads.gradient(0, 1);
        assert_eq!(&g1[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&g1[3..], &[1.5, -2.0, 0.5]);
    }

    #[test]
    fn dead_relu_units_have_zero_gradient() {
        // Negative pre-activations under ReLU kill the whole path.
        let l1 = WeightTensor::new(LayerDims::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let l2 = WeightTensor::new(LayerDims::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let net = Network::new(
            vec![(l1, Activation::Relu), (l2, Activation::Identity)],
            Shape::new(1, 1, 1),
        )
        .unwrap();
        let x = SignalBatch::new(1, Shape::new(1, 1, 1), vec![-3.0]).unwrap();
        let grads = layer_output_gradients(&net, 0, &x).unwrap();
        assert_eq!(grads.gradient(0, 0), &[0.0]);
    }

    fn finite_difference(
        net: &Network,
        layer: usize,
        x: &SignalBatch,
        widx: usize,
        h: f64,
    ) -> Vec<f64> {
        let mut plus = net.layer(layer).data().to_vec();
        plus[widx] += h;
        let mut minus = net.layer(layer).data().to_vec();
        minus[widx] -= h;
        let dims = net.layer(layer).dims();
        let bias = net.layer(layer).bias().to_vec();
        let np = net
            .with_layer(layer, WeightTensor::with_bias(dims, plus, bias.clone()).unwrap())
            .unwrap();
        let nm = net
            .with_layer(layer, WeightTensor::with_bias(dims, minus, bias).unwrap())
            .unwrap();
        let yp = np.forward(x).unwrap();
        let ym = nm.forward(x).unwrap();
        yp.data()
            .iter()
            .zip(ym.data())
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = crate::rng::seeded(7);
        let l1 = crate::toy::random_layer(&mut rng, LayerDims::new(3, 2, 2, 2), 0.8);
        let l2 = crate::toy::random_layer(&mut rng, LayerDims::new(2, 3, 2, 2), 0.8);
        let net = Network::relu_chain(vec![l1, l2], Shape::new(2, 4, 4)).unwrap();
        let x = crate::toy::random_batch(&mut rng, 2, Shape::new(2, 4, 4));
        let h = 1e-4;
        for layer in 0..2 {
            let grads = layer_output_gradients(&net, layer, &x).unwrap();
            let w = net.layer(layer).weight_count();
            let out_len = net.output_shape().len();
            for widx in (0..w).step_by(3) {
                let fd = finite_difference(&net, layer, &x, widx, h);
                for s in 0..x.count() {
                    for i in 0..out_len {
                        let bp = grads.gradient(s, i)[widx];
                        let fdv = fd[s * out_len + i];
                        let err = (bp - fdv).abs();
                        assert!(
                            err <= 1e-4 * bp.abs().max(fdv.abs()).max(1e-6),
                            "layer {layer} weight {widx} sample {s} coord {i}: bp={bp} fd={fdv}"
                        );
                    }
                }
            }
        }
    }
}
