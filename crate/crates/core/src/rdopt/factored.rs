//! Factored inference through the truncated transform pair and its
//! multiplication accounting.
//!
//! With a column transform, `x -> Theta x` becomes `x -> S_{1:k} (T_{1:k} x)`
//! where only the first `k` transform rows carry bits: an `a x b` stage with
//! `k` outputs followed by a 1x1 stage. Row transforms mirror this with the
//! 1x1 basis stage first. The speed-up ratio per layer is
//! `(n k + a b m k) / (a b m n)` (column) with `m` and `n` swapped for rows.

use nalgebra::DMatrix;

use crate::covariance::Axis;
use crate::error::{Error, Result};
use crate::model::{conv_forward, Activation, LayerDims, Network, SignalBatch, WeightTensor};
use crate::transform::{TransformKind, TransformPlan};

use super::plan::{quantize_cols, quantize_rows, LayerPlan, TransformedLayer};

/// Multiplication-count ratio of factored versus direct evaluation.
pub fn acceleration(dims: LayerDims, axis: Axis, k: usize) -> f64 {
    let (n, m, ab) = (dims.n as f64, dims.m as f64, dims.kernel_len() as f64);
    let k = k as f64;
    match axis {
        Axis::Column => (n * k + ab * m * k) / (ab * m * n),
        Axis::Row => (m * k + ab * n * k) / (ab * m * n),
    }
}

/// FLOP-weighted average acceleration across layers, weighted by the size of
/// each layer's input activations. Layers without an active 1D transform
/// count as 1.
pub fn network_acceleration(net: &Network, plans: &[LayerPlan]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (l, plan) in plans.iter().enumerate() {
        let w = net.shape_at(l).len() as f64;
        let a = match plan.transform.kind {
            TransformKind::Klt | TransformKind::Elt => {
                let dims = net.layer(l).dims();
                let stored = super::plan::stored_basis_cols(dims, plan.transform.axis);
                acceleration(dims, plan.transform.axis, plan.nonzero_rows().min(stored))
            }
            _ => 1.0,
        };
        num += w * a;
        den += w;
    }
    num / den
}

/// Multiplication counters for one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCount {
    pub direct: u64,
    pub factored: u64,
}

impl FlopCount {
    pub fn ratio(&self) -> f64 {
        self.factored as f64 / self.direct as f64
    }
}

/// One layer in factored form: the truncated transform stage and basis stage.
#[derive(Debug, Clone)]
pub struct FactoredLayer {
    pub dims: LayerDims,
    pub axis: Axis,
    pub k: usize,
    /// `k x vector_len` transform rows.
    pub t: DMatrix<f64>,
    /// `channels x k` basis columns.
    pub s: DMatrix<f64>,
    pub bias: Vec<f64>,
}

impl FactoredLayer {
    fn build(tl: &TransformedLayer, t: DMatrix<f64>, s: DMatrix<f64>, k: usize) -> Self {
        FactoredLayer {
            dims: tl.dims,
            axis: tl.axis,
            k,
            t: t.rows(0, k).into_owned(),
            s: s.columns(0, k).into_owned(),
            bias: tl.bias.clone(),
        }
    }

    /// Unquantized, full-rank factorization of a layer under a 1D transform.
    pub fn exact(layer: &WeightTensor, transform: &TransformPlan) -> Result<Self> {
        let tl = TransformedLayer::new(layer, transform)?;
        let s = tl
            .s
            .clone()
            .ok_or_else(|| Error::Unsupported("factored inference needs a 1D transform".into()))?;
        let k = tl.stored_rows();
        let t = tl.t.clone();
        Ok(Self::build(&tl, t, s, k))
    }

    /// Quantized, truncated factorization per a layer plan.
    pub fn from_plan(layer: &WeightTensor, plan: &LayerPlan) -> Result<Self> {
        match plan.transform.kind {
            TransformKind::Klt | TransformKind::Elt => {}
            other => {
                return Err(Error::Unsupported(format!(
                    "factored inference needs a 1D transform, got {other}"
                )))
            }
        }
        let tl = TransformedLayer::new(layer, &plan.transform)?;
        let tq = quantize_rows(&tl.t, &plan.t_blocks);
        let sq = quantize_cols(tl.s.as_ref().expect("1D transform has a basis"), &plan.s_blocks);
        let k = plan.nonzero_rows().min(tl.stored_rows());
        Ok(Self::build(&tl, tq, sq, k))
    }

    /// Reconstructed weights `S_{1:k} T_{1:k}` as a plain layer.
    pub fn reconstructed(&self) -> Result<WeightTensor> {
        let mat = &self.s * &self.t;
        let data = crate::covariance::dematricize(&mat, self.dims, self.axis);
        WeightTensor::with_bias(self.dims, data, self.bias.clone())
    }

    fn transform_stage(&self) -> Result<WeightTensor> {
        let d = self.dims;
        match self.axis {
            Axis::Column => {
                // k outputs of a x b kernels over the original m inputs
                let mut data = vec![0.0; self.k * d.m * d.a * d.b];
                for r in 0..self.k {
                    for c in 0..d.m * d.a * d.b {
                        data[r * d.m * d.a * d.b + c] = self.t[(r, c)];
                    }
                }
                WeightTensor::new(LayerDims::new(self.k, d.m, d.a, d.b), data)
            }
            Axis::Row => {
                // n outputs of a x b kernels over k transformed inputs;
                // last stage, so it carries the bias
                let kl = d.kernel_len();
                let mut data = vec![0.0; d.n * self.k * kl];
                for r in 0..self.k {
                    for kout in 0..d.n {
                        for t in 0..kl {
                            data[(kout * self.k + r) * kl + t] = self.t[(r, kout * kl + t)];
                        }
                    }
                }
                WeightTensor::with_bias(LayerDims::new(d.n, self.k, d.a, d.b), data, self.bias.clone())
            }
        }
    }

    fn basis_stage(&self) -> Result<WeightTensor> {
        let d = self.dims;
        match self.axis {
            Axis::Column => {
                // n outputs from k inputs, 1x1; carries the bias
                let mut data = vec![0.0; d.n * self.k];
                for kout in 0..d.n {
                    for r in 0..self.k {
                        data[kout * self.k + r] = self.s[(kout, r)];
                    }
                }
                WeightTensor::with_bias(LayerDims::new(d.n, self.k, 1, 1), data, self.bias.clone())
            }
            Axis::Row => {
                // k outputs from the m original inputs, 1x1 (transposed basis)
                let mut data = vec![0.0; self.k * d.m];
                for r in 0..self.k {
                    for j in 0..d.m {
                        data[r * d.m + j] = self.s[(j, r)];
                    }
                }
                WeightTensor::new(LayerDims::new(self.k, d.m, 1, 1), data)
            }
        }
    }

    /// Evaluates the factored pair on a batch, counting multiplications for
    /// both the factored path and the direct baseline.
    pub fn forward(&self, x: &SignalBatch, count: &mut FlopCount) -> Result<SignalBatch> {
        let d = self.dims;
        let ish = x.shape();
        let osh_direct = crate::model::Shape::new(d.n, ish.height - d.a + 1, ish.width - d.b + 1);
        count.direct += (d.weight_count() * osh_direct.height * osh_direct.width * x.count()) as u64;
        if self.k == 0 {
            // nothing but the bias survives
            let mut out = SignalBatch::zeros(x.count(), osh_direct);
            for s in 0..x.count() {
                let sample = out.sample_mut(s);
                for c in 0..d.n {
                    let base = c * osh_direct.height * osh_direct.width;
                    for v in &mut sample[base..base + osh_direct.height * osh_direct.width] {
                        *v = self.bias[c];
                    }
                }
            }
            return Ok(out);
        }
        match self.axis {
            Axis::Column => {
                let tst = self.transform_stage()?;
                let z = conv_forward(&tst, x)?;
                count.factored +=
                    (tst.weight_count() * z.shape().height * z.shape().width * x.count()) as u64;
                let sst = self.basis_stage()?;
                let y = conv_forward(&sst, &z)?;
                count.factored +=
                    (sst.weight_count() * y.shape().height * y.shape().width * x.count()) as u64;
                Ok(y)
            }
            Axis::Row => {
                let sst = self.basis_stage()?;
                let z = conv_forward(&sst, x)?;
                count.factored +=
                    (sst.weight_count() * z.shape().height * z.shape().width * x.count()) as u64;
                let tst = self.transform_stage()?;
                let y = conv_forward(&tst, &z)?;
                count.factored +=
                    (tst.weight_count() * y.shape().height * y.shape().width * x.count()) as u64;
                Ok(y)
            }
        }
    }
}

/// Runs a whole network through per-layer factored forms, applying the
/// network's activations between layers.
pub fn factored_forward(
    net: &Network,
    layers: &[FactoredLayer],
    x: &SignalBatch,
) -> Result<(SignalBatch, FlopCount)> {
    if layers.len() != net.len() {
        return Err(Error::InvalidParam(format!(
            "expected {} factored layers, got {}",
            net.len(),
            layers.len()
        )));
    }
    let mut count = FlopCount::default();
    let mut cur = x.clone();
    for (l, fl) in layers.iter().enumerate() {
        let mut next = fl.forward(&cur, &mut count)?;
        if net.activation(l) == Activation::Relu {
            for s in 0..next.count() {
                for v in next.sample_mut(s) {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        cur = next;
    }
    Ok((cur, count))
}
