//! Bit-depth–distortion curves via step-size search on output distortion.
//!
//! For every block and candidate bit-depth, the step-size minimizing the
//! quantized network's output distortion is found by grid search, with only
//! the target unit quantized and every other weight left untouched. The
//! step-size that minimizes weight distortion is deliberately not used; it
//! can sit far from the output-distortion optimum.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{batch_sq_distance, conv_forward, Activation, Network, SignalBatch, WeightTensor};
use crate::quant::QuantParams;

use super::grid::delta_grid;
use super::plan::{partition_blocks, quantize_cols, quantize_rows, TransformedLayer};

/// Curve-construction parameters: block count `B`, maximum bit-depth `M`,
/// and the step-search resolution (`None` = the fine sqrt(2) grid).
#[derive(Debug, Clone, Copy)]
pub struct CurveConfig {
    pub blocks: usize,
    pub max_bits: u8,
    pub steps: Option<usize>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            blocks: 8,
            max_bits: 16,
            steps: Some(8),
        }
    }
}

/// Which stored matrix a unit lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    /// Row-block of the transform-domain matrix.
    Transform,
    /// Column-block of the synthesis basis.
    Basis,
    /// Column-block of the input-side basis (2D transforms).
    Basis2,
}

/// One allocation unit: a contiguous block in one section.
#[derive(Debug, Clone, Copy)]
pub struct Unit {
    pub section: Section,
    pub start: usize,
    pub len: usize,
}

/// Bit-depth–distortion curve of one unit: `d[r]` for `r = 0..=M` with
/// `d[0]` the cost of zeroing the unit, and the minimizing step per depth.
#[derive(Debug, Clone)]
pub struct RDCurve {
    pub unit: Unit,
    /// Scalar weights governed by the unit (the rate weight in allocation).
    pub weights: u64,
    pub d: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RDCurve {
    pub fn max_bits(&self) -> u8 {
        (self.d.len() - 1) as u8
    }

    /// Quantizer realizing bit-depth `r` on this unit.
    pub fn params(&self, r: u8) -> QuantParams {
        if r == 0 {
            QuantParams::zero()
        } else {
            QuantParams::new(r, self.delta[r as usize]).expect("curve stores valid steps")
        }
    }
}

/// Network context for measuring how perturbing one layer moves the output.
/// Prefix activations and the reference output are cached once.
pub struct DistortionProbe<'a> {
    net: &'a Network,
    layer_index: usize,
    input: SignalBatch,
    reference: SignalBatch,
}

impl<'a> DistortionProbe<'a> {
    pub fn new(net: &'a Network, layer_index: usize, calib: &SignalBatch) -> Result<Self> {
        if calib.count() == 0 {
            return Err(Error::EmptyBatch);
        }
        if layer_index >= net.len() {
            return Err(Error::InvalidParam(format!(
                "layer index {layer_index} out of range"
            )));
        }
        let mut input = calib.clone();
        for l in 0..layer_index {
            input = apply_layer(net, l, &input)?;
        }
        let mut reference = input.clone();
        for l in layer_index..net.len() {
            reference = apply_layer(net, l, &reference)?;
        }
        Ok(DistortionProbe {
            net,
            layer_index,
            input,
            reference,
        })
    }

    /// Output distortion when layer `layer_index` is replaced by `weights`.
    pub fn distortion(&self, weights: &WeightTensor) -> Result<f64> {
        let mut cur = conv_forward(weights, &self.input)?;
        if self.net.activation(self.layer_index) == Activation::Relu {
            cur = relu_batch(cur);
        }
        let out = self.net.forward_from(self.layer_index + 1, &cur)?;
        Ok(batch_sq_distance(&out, &self.reference))
    }

    pub fn reference(&self) -> &SignalBatch {
        &self.reference
    }
}

fn relu_batch(mut x: SignalBatch) -> SignalBatch {
    for s in 0..x.count() {
        for v in x.sample_mut(s) {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    x
}

fn apply_layer(net: &Network, l: usize, x: &SignalBatch) -> Result<SignalBatch> {
    let y = conv_forward(net.layer(l), x)?;
    Ok(match net.activation(l) {
        Activation::Relu => relu_batch(y),
        Activation::Identity => y,
    })
}

/// The layer with exactly one unit quantized (everything else untouched).
fn quantize_unit(tl: &TransformedLayer, unit: Unit, q: QuantParams) -> Result<WeightTensor> {
    let assign = super::plan::BlockAssignment {
        start: unit.start,
        len: unit.len,
        q,
    };
    let one = std::slice::from_ref(&assign);
    let (t, s, v): (DMatrix<f64>, Option<DMatrix<f64>>, Option<DMatrix<f64>>) = match unit.section {
        Section::Transform => (quantize_rows(&tl.t, one), tl.s.clone(), tl.v.clone()),
        Section::Basis => {
            let s = tl
                .s
                .as_ref()
                .ok_or_else(|| Error::InvalidParam("no basis section in this plan".into()))?;
            (tl.t.clone(), Some(quantize_cols(s, one)), tl.v.clone())
        }
        Section::Basis2 => {
            let v = tl
                .v
                .as_ref()
                .ok_or_else(|| Error::InvalidParam("no second basis in this plan".into()))?;
            (tl.t.clone(), tl.s.clone(), Some(quantize_cols(v, one)))
        }
    };
    tl.reconstruct(&t, s.as_ref(), v.as_ref())
}

fn unit_values_scale(tl: &TransformedLayer, unit: Unit) -> f64 {
    let mat = match unit.section {
        Section::Transform => &tl.t,
        Section::Basis => tl.s.as_ref().expect("section checked by caller"),
        Section::Basis2 => tl.v.as_ref().expect("section checked by caller"),
    };
    let mut max = 0.0_f64;
    match unit.section {
        Section::Transform => {
            for r in unit.start..unit.start + unit.len {
                for c in 0..mat.ncols() {
                    max = max.max(mat[(r, c)].abs());
                }
            }
        }
        _ => {
            for c in unit.start..unit.start + unit.len {
                for r in 0..mat.nrows() {
                    max = max.max(mat[(r, c)].abs());
                }
            }
        }
    }
    max
}

fn section_scale(tl: &TransformedLayer, section: Section) -> f64 {
    let mat = match section {
        Section::Transform => &tl.t,
        Section::Basis => match tl.s.as_ref() {
            Some(s) => s,
            None => return 0.0,
        },
        Section::Basis2 => match tl.v.as_ref() {
            Some(v) => v,
            None => return 0.0,
        },
    };
    mat.abs().max()
}

/// Grid-search the step-size minimizing output distortion for one unit at
/// one bit-depth. Returns `(step, distortion)`; ties break toward the
/// smaller step. An all-zero unit returns the zeroing distortion unchanged.
pub fn step_size_search(
    probe: &DistortionProbe,
    tl: &TransformedLayer,
    unit: Unit,
    bits: u8,
    grid: &[f64],
) -> Result<(f64, f64)> {
    if bits == 0 || grid.is_empty() {
        return Err(Error::InvalidParam(
            "step-size search needs bits >= 1 and a non-empty grid".into(),
        ));
    }
    let evals: Vec<f64> = grid
        .par_iter()
        .map(|&delta| {
            let q = QuantParams::new(bits, delta)?;
            let w = quantize_unit(tl, unit, q)?;
            probe.distortion(&w)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, d) in evals.iter().enumerate() {
        if *d < evals[best] {
            best = i;
        }
    }
    Ok((grid[best], evals[best]))
}

/// Builds the curve set for one section of one transformed layer.
///
/// Units are contiguous blocks in sorted-variance order (the transform
/// already ordered rows). Structurally zero blocks get flat curves so the
/// allocator retires them at zero bits.
pub fn build_section_curves(
    probe: &DistortionProbe,
    tl: &TransformedLayer,
    section: Section,
    cfg: &CurveConfig,
) -> Result<Vec<RDCurve>> {
    let (count, unit_weight): (usize, u64) = match section {
        Section::Transform => (tl.stored_rows(), tl.t.ncols() as u64),
        Section::Basis => match tl.s.as_ref() {
            Some(s) => (s.ncols(), s.nrows() as u64),
            None => return Ok(Vec::new()),
        },
        Section::Basis2 => match tl.v.as_ref() {
            Some(v) => (v.ncols(), v.nrows() as u64),
            None => return Ok(Vec::new()),
        },
    };
    let zero_floor = 1e-12 * section_scale(tl, section);
    let mut curves = Vec::new();
    for (start, len) in partition_blocks(count, cfg.blocks) {
        let unit = Unit { section, start, len };
        let zeroed = quantize_unit(tl, unit, QuantParams::zero())?;
        let d0 = probe.distortion(&zeroed)?;
        let sigma = unit_values_scale(tl, unit);
        let mut d = vec![d0; cfg.max_bits as usize + 1];
        let mut delta = vec![0.0; cfg.max_bits as usize + 1];
        if sigma > zero_floor {
            for r in 1..=cfg.max_bits {
                let grid = delta_grid(sigma, r, cfg.steps);
                let (step, dist) = step_size_search(probe, tl, unit, r, &grid)?;
                d[r as usize] = dist;
                delta[r as usize] = step;
            }
        } else {
            // structurally zero rows/columns: any bits are wasted
            let grid = delta_grid(sigma, 1, cfg.steps);
            for r in 1..=cfg.max_bits {
                delta[r as usize] = grid[0];
            }
        }
        curves.push(RDCurve {
            unit,
            weights: len as u64 * unit_weight,
            d,
            delta,
        });
    }
    Ok(curves)
}
