//! Quantization plans, bit budgets, and transform overhead accounting.

use nalgebra::DMatrix;

use crate::covariance::{dematricize, matricize, Axis};
use crate::error::{Error, Result};
use crate::model::{LayerDims, WeightTensor};
use crate::quant::{quantize, QuantParams};
use crate::transform::{apply_2d, reconstruct_2d, TransformKind, TransformPlan};

/// Contiguous unit of rows (of T) or columns (of a basis) sharing one
/// quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockAssignment {
    pub start: usize,
    pub len: usize,
    pub q: QuantParams,
}

/// Splits `count` units into at most `blocks` contiguous, equal-as-possible
/// runs. Both the encoder and the decoder derive block boundaries from this.
pub fn partition_blocks(count: usize, blocks: usize) -> Vec<(usize, usize)> {
    let b = blocks.clamp(1, count.max(1));
    let base = count / b;
    let rem = count % b;
    let mut out = Vec::with_capacity(b);
    let mut start = 0;
    for i in 0..b {
        let len = base + usize::from(i < rem);
        if len == 0 {
            continue;
        }
        out.push((start, len));
        start += len;
    }
    out
}

/// Stored row/column count of the transform-domain matrix and its basis:
/// only the first `min(channels, vector_len)` coefficients can be non-zero.
pub fn stored_basis_cols(dims: LayerDims, axis: Axis) -> usize {
    axis.channels(dims).min(axis.vector_len(dims))
}

/// Net element overhead of carrying an inverse transform, relative to
/// quantizing the layer directly: `min(ch^2, len^2)` for the given axis.
pub fn overhead_elements(dims: LayerDims, axis: Axis) -> u64 {
    let ch = axis.channels(dims) as u64;
    let len = axis.vector_len(dims) as u64;
    (ch * ch).min(len * len)
}

/// Per-layer quantization decisions: the transform and the per-block
/// quantizers for the transform rows and basis columns.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub transform: TransformPlan,
    pub t_blocks: Vec<BlockAssignment>,
    /// Empty when no transform is active.
    pub s_blocks: Vec<BlockAssignment>,
    /// Input-side basis blocks; 2D transforms only.
    pub v_blocks: Vec<BlockAssignment>,
    pub lambda: f64,
}

impl LayerPlan {
    /// Number of leading transform rows carrying any bits: row-blocks with
    /// `R > 0` expanded to rows.
    pub fn nonzero_rows(&self) -> usize {
        self.t_blocks
            .iter()
            .filter(|b| b.q.bits() > 0)
            .map(|b| b.start + b.len)
            .max()
            .unwrap_or(0)
    }
}

/// Per-layer bit counts; index payload and basis payload are kept apart so
/// the overhead charged to a transform stays visible.
#[derive(Debug, Clone, Copy)]
pub struct LayerBits {
    pub weights: u64,
    pub index_bits: u64,
    pub basis_bits: u64,
}

/// Whole-model bit accounting. `rate()` is bits per original weight scalar,
/// with basis bits charged whenever a transform is active.
#[derive(Debug, Clone)]
pub struct BitBudget {
    pub per_layer: Vec<LayerBits>,
}

impl BitBudget {
    pub fn index_bits(&self) -> u64 {
        self.per_layer.iter().map(|l| l.index_bits).sum()
    }

    pub fn basis_bits(&self) -> u64 {
        self.per_layer.iter().map(|l| l.basis_bits).sum()
    }

    pub fn total_bits(&self) -> u64 {
        self.index_bits() + self.basis_bits()
    }

    pub fn weight_count(&self) -> u64 {
        self.per_layer.iter().map(|l| l.weights).sum()
    }

    /// Bits per original weight.
    pub fn rate(&self) -> f64 {
        self.total_bits() as f64 / self.weight_count() as f64
    }

    /// Fraction of the model's weights held by layer `l`.
    pub fn fraction(&self, l: usize) -> f64 {
        self.per_layer[l].weights as f64 / self.weight_count() as f64
    }

    /// `32 / rate`, the convention for float32 baselines.
    pub fn compression_ratio(&self) -> f64 {
        32.0 / self.rate()
    }
}

fn block_bits(blocks: &[BlockAssignment], unit_len: usize) -> u64 {
    blocks
        .iter()
        .map(|b| (b.len * unit_len) as u64 * b.q.bits() as u64)
        .sum()
}

/// Exact payload accounting for a set of layer plans: `sum(count * R)` over
/// every block, matching the serialized payload bit-for-bit.
pub fn budget_for(dims: &[LayerDims], plans: &[LayerPlan]) -> BitBudget {
    let per_layer = dims
        .iter()
        .zip(plans)
        .map(|(&d, p)| {
            let axis = p.transform.axis;
            let len = axis.vector_len(d);
            let ch = axis.channels(d);
            let index_bits = block_bits(&p.t_blocks, len);
            let basis_bits = match p.transform.kind {
                TransformKind::None => 0,
                TransformKind::TwoD => {
                    block_bits(&p.s_blocks, d.n) + block_bits(&p.v_blocks, d.m)
                }
                _ => block_bits(&p.s_blocks, ch),
            };
            LayerBits {
                weights: d.weight_count() as u64,
                index_bits,
                basis_bits,
            }
        })
        .collect();
    BitBudget { per_layer }
}

/// Basis overhead of one layer plan: reported element count (the min rule)
/// and the exact basis payload bits.
pub fn overhead_bits(dims: LayerDims, plan: &LayerPlan) -> (u64, u64) {
    if plan.transform.kind == TransformKind::None {
        return (0, 0);
    }
    let budget = budget_for(&[dims], std::slice::from_ref(plan));
    (
        overhead_elements(dims, plan.transform.axis),
        budget.per_layer[0].basis_bits,
    )
}

/// A layer carried into the transform domain, with the unquantized stored
/// matrices the step-size search perturbs one unit at a time.
#[derive(Debug, Clone)]
pub struct TransformedLayer {
    pub dims: LayerDims,
    pub axis: Axis,
    pub kind: TransformKind,
    pub bias: Vec<f64>,
    /// Transform-domain coefficients, `stored_rows x vector_len`.
    pub t: DMatrix<f64>,
    /// Synthesis basis, `channels x stored_rows` (2D: the output-side basis).
    pub s: Option<DMatrix<f64>>,
    /// Input-side basis, 2D transforms only.
    pub v: Option<DMatrix<f64>>,
    plan: TransformPlan,
}

impl TransformedLayer {
    pub fn new(layer: &WeightTensor, transform: &TransformPlan) -> Result<Self> {
        let dims = layer.dims();
        let axis = transform.axis;
        match transform.kind {
            TransformKind::None => Ok(TransformedLayer {
                dims,
                axis,
                kind: TransformKind::None,
                bias: layer.bias().to_vec(),
                t: matricize(layer, axis),
                s: None,
                v: None,
                plan: transform.clone(),
            }),
            TransformKind::Klt | TransformKind::Elt => {
                let ch = axis.channels(dims);
                if transform.channels() != ch {
                    return Err(Error::shape(
                        "transform plan",
                        format!("{ch} channels"),
                        format!("{} channels", transform.channels()),
                    ));
                }
                let stored = stored_basis_cols(dims, axis);
                let full = transform.apply(&matricize(layer, axis));
                let t = full.rows(0, stored).into_owned();
                let s = transform.synthesis.columns(0, stored).into_owned();
                Ok(TransformedLayer {
                    dims,
                    axis,
                    kind: transform.kind,
                    bias: layer.bias().to_vec(),
                    t,
                    s: Some(s),
                    v: None,
                    plan: transform.clone(),
                })
            }
            TransformKind::TwoD => {
                let coeffs = apply_2d(layer, transform)?;
                let t = crate::covariance::matricize_data(&coeffs, dims, Axis::Column);
                let second = transform
                    .second
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParam("2D plan lacks second axis".into()))?;
                Ok(TransformedLayer {
                    dims,
                    axis: Axis::Column,
                    kind: TransformKind::TwoD,
                    bias: layer.bias().to_vec(),
                    t,
                    s: Some(transform.synthesis.clone()),
                    v: Some(second.basis.clone()),
                    plan: transform.clone(),
                })
            }
            TransformKind::IntraKernel => Err(Error::Unsupported(
                "intra-kernel transforms are analysis-only and not part of the pipeline".into(),
            )),
        }
    }

    pub fn stored_rows(&self) -> usize {
        self.t.nrows()
    }

    /// The transform this layer was carried into the coefficient domain with.
    pub fn plan(&self) -> &TransformPlan {
        &self.plan
    }

    /// Rebuilds the weight tensor from (possibly quantized) stored matrices.
    pub fn reconstruct(
        &self,
        t: &DMatrix<f64>,
        s: Option<&DMatrix<f64>>,
        v: Option<&DMatrix<f64>>,
    ) -> Result<WeightTensor> {
        reconstruct_weights(self.kind, self.axis, self.dims, t, s, v, self.bias.clone())
    }

    /// The layer with every block of every section quantized per `plan`.
    pub fn quantize_with(&self, plan: &LayerPlan) -> Result<WeightTensor> {
        let tq = quantize_rows(&self.t, &plan.t_blocks);
        let sq = self
            .s
            .as_ref()
            .map(|s| quantize_cols(s, &plan.s_blocks));
        let vq = self
            .v
            .as_ref()
            .map(|v| quantize_cols(v, &plan.v_blocks));
        self.reconstruct(&tq, sq.as_ref(), vq.as_ref())
    }
}

/// Rebuilds a layer from stored matrices; the encoder-side quantization and
/// the decoder share this path so round-trips stay bit-exact.
pub(crate) fn reconstruct_weights(
    kind: TransformKind,
    axis: Axis,
    dims: LayerDims,
    t: &DMatrix<f64>,
    s: Option<&DMatrix<f64>>,
    v: Option<&DMatrix<f64>>,
    bias: Vec<f64>,
) -> Result<WeightTensor> {
    let data = match kind {
        TransformKind::None => dematricize(t, dims, axis),
        TransformKind::Klt | TransformKind::Elt => {
            let s = s.ok_or_else(|| Error::InvalidParam("missing basis".into()))?;
            dematricize(&(s * t), dims, axis)
        }
        TransformKind::TwoD => {
            let s = s.ok_or_else(|| Error::InvalidParam("missing output basis".into()))?;
            let v = v.ok_or_else(|| Error::InvalidParam("missing input basis".into()))?;
            let coeffs = dematricize(t, dims, Axis::Column);
            reconstruct_2d_with(&coeffs, dims, s, v)
        }
        TransformKind::IntraKernel => {
            return Err(Error::Unsupported("intra-kernel plans cannot be materialized".into()))
        }
    };
    WeightTensor::with_bias(dims, data, bias)
}

/// Applies `theta = U T V^t` with explicit (quantized) bases.
fn reconstruct_2d_with(
    coeffs: &[f64],
    dims: LayerDims,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Vec<f64> {
    // Reuse the plan-based path by substituting the bases.
    let plan = TransformPlan {
        kind: TransformKind::TwoD,
        axis: Axis::Column,
        analysis: u.transpose(),
        synthesis: u.clone(),
        eigenvalues: nalgebra::DVector::zeros(dims.n),
        second: Some(crate::transform::SecondAxis {
            basis: v.clone(),
            eigenvalues: nalgebra::DVector::zeros(dims.m),
        }),
    };
    reconstruct_2d(coeffs, dims, &plan).expect("second axis present")
}

/// Row-block values in serialization order: each row left to right.
pub(crate) fn gather_row_block(mat: &DMatrix<f64>, start: usize, len: usize) -> Vec<f64> {
    let mut vals = Vec::with_capacity(len * mat.ncols());
    for r in start..start + len {
        for c in 0..mat.ncols() {
            vals.push(mat[(r, c)]);
        }
    }
    vals
}

/// Column-block values in serialization order: each column top to bottom.
pub(crate) fn gather_col_block(mat: &DMatrix<f64>, start: usize, len: usize) -> Vec<f64> {
    let mut vals = Vec::with_capacity(len * mat.nrows());
    for c in start..start + len {
        for r in 0..mat.nrows() {
            vals.push(mat[(r, c)]);
        }
    }
    vals
}

pub(crate) fn scatter_row_block(mat: &mut DMatrix<f64>, start: usize, len: usize, vals: &[f64]) {
    let mut it = vals.iter();
    for r in start..start + len {
        for c in 0..mat.ncols() {
            mat[(r, c)] = *it.next().expect("value count matches block");
        }
    }
}

pub(crate) fn scatter_col_block(mat: &mut DMatrix<f64>, start: usize, len: usize, vals: &[f64]) {
    let mut it = vals.iter();
    for c in start..start + len {
        for r in 0..mat.nrows() {
            mat[(r, c)] = *it.next().expect("value count matches block");
        }
    }
}

/// Quantizes row-blocks of a matrix, leaving uncovered rows untouched.
pub fn quantize_rows(mat: &DMatrix<f64>, blocks: &[BlockAssignment]) -> DMatrix<f64> {
    let mut out = mat.clone();
    for b in blocks {
        let vals = gather_row_block(mat, b.start, b.len);
        let (_, deq) = quantize(&vals, b.q);
        scatter_row_block(&mut out, b.start, b.len, &deq);
    }
    out
}

/// Quantizes column-blocks of a matrix.
pub fn quantize_cols(mat: &DMatrix<f64>, blocks: &[BlockAssignment]) -> DMatrix<f64> {
    let mut out = mat.clone();
    for b in blocks {
        let vals = gather_col_block(mat, b.start, b.len);
        let (_, deq) = quantize(&vals, b.q);
        scatter_col_block(&mut out, b.start, b.len, &deq);
    }
    out
}
