//! The full rate–distortion pipeline and the Lagrangian frontier sweep.
//!
//! Curves are built once per network; each trade-off point then costs one
//! allocation (cheap) plus one end-to-end distortion measurement with every
//! layer jointly quantized. Target-rate compression bisects the trade-off
//! parameter against the realized rate.

use rayon::prelude::*;

use crate::covariance::{layer_covariances, weight_covariance, Axis, GradConfig};
use crate::error::{Error, Result};
use crate::model::{batch_sq_distance, LayerDims, Network, SignalBatch};
use crate::transform::{elt, klt, transform_2d, TransformKind, TransformPlan};

use super::allocate::allocate_bits;
use super::curves::{build_section_curves, CurveConfig, DistortionProbe, RDCurve, Section};
use super::factored::network_acceleration;
use super::plan::{budget_for, BitBudget, BlockAssignment, LayerPlan, TransformedLayer};

/// Pipeline configuration for one compression run.
#[derive(Debug, Clone, Copy)]
pub struct SweepConfig {
    pub kind: TransformKind,
    pub axis: Axis,
    pub curve: CurveConfig,
    /// Trace-relative ridge added to gradient covariances before inversion.
    pub ridge: f64,
    pub grad: GradConfig,
}

impl SweepConfig {
    pub fn new(kind: TransformKind, axis: Axis) -> Self {
        SweepConfig {
            kind,
            axis,
            curve: CurveConfig::default(),
            ridge: 1e-8,
            grad: GradConfig::default(),
        }
    }
}

/// One layer with its transform applied and curves built.
pub struct PreparedLayer {
    pub transformed: TransformedLayer,
    pub t_curves: Vec<RDCurve>,
    pub s_curves: Vec<RDCurve>,
    pub v_curves: Vec<RDCurve>,
}

/// Curves for a whole network, ready to be swept over trade-off points.
pub struct Prepared {
    pub layers: Vec<PreparedLayer>,
    dims: Vec<LayerDims>,
}

/// Constructs the per-layer transform for the configured family.
pub fn build_transform(
    net: &Network,
    layer_index: usize,
    calib: &SignalBatch,
    config: &SweepConfig,
) -> Result<TransformPlan> {
    let layer = net.layer(layer_index);
    let dims = layer.dims();
    match config.kind {
        TransformKind::None => Ok(TransformPlan::identity(
            config.axis.channels(dims),
            config.axis,
        )),
        TransformKind::Klt => klt(&weight_covariance(layer, config.axis), config.axis),
        TransformKind::Elt => {
            let pair = layer_covariances(net, layer_index, calib, config.axis, config.ridge, &config.grad)?;
            elt(&pair.weights, &pair.gradients, config.axis)
        }
        TransformKind::TwoD => {
            let c_out = weight_covariance(layer, Axis::Column);
            let c_in = weight_covariance(layer, Axis::Row);
            transform_2d(layer, &c_out, &c_in)
        }
        TransformKind::IntraKernel => Err(Error::Unsupported(
            "intra-kernel transforms are analysis-only".into(),
        )),
    }
}

/// Builds transforms and bit-depth–distortion curves for every layer.
pub fn prepare(net: &Network, calib: &SignalBatch, config: &SweepConfig) -> Result<Prepared> {
    let mut layers = Vec::with_capacity(net.len());
    for l in 0..net.len() {
        let transform = build_transform(net, l, calib, config)?;
        let transformed = TransformedLayer::new(net.layer(l), &transform)?;
        let probe = DistortionProbe::new(net, l, calib)?;
        let t_curves = build_section_curves(&probe, &transformed, Section::Transform, &config.curve)?;
        let s_curves = if config.kind == TransformKind::None {
            Vec::new()
        } else {
            build_section_curves(&probe, &transformed, Section::Basis, &config.curve)?
        };
        let v_curves = if config.kind == TransformKind::TwoD {
            build_section_curves(&probe, &transformed, Section::Basis2, &config.curve)?
        } else {
            Vec::new()
        };
        layers.push(PreparedLayer {
            transformed,
            t_curves,
            s_curves,
            v_curves,
        });
    }
    Ok(Prepared {
        dims: (0..net.len()).map(|l| net.layer(l).dims()).collect(),
        layers,
    })
}

fn blocks_from(curves: &[RDCurve], lambda: f64) -> Vec<BlockAssignment> {
    allocate_bits(curves, lambda)
        .into_iter()
        .zip(curves)
        .map(|(q, c)| BlockAssignment {
            start: c.unit.start,
            len: c.unit.len,
            q,
        })
        .collect()
}

impl Prepared {
    /// Per-layer plans at one trade-off point.
    pub fn allocate(&self, lambda: f64) -> Vec<LayerPlan> {
        self.layers
            .iter()
            .map(|pl| {
                // plan carries the transform matrices used at prepare time
                let transform = pl.transformed.plan().clone();
                LayerPlan {
                    transform,
                    t_blocks: blocks_from(&pl.t_curves, lambda),
                    s_blocks: blocks_from(&pl.s_curves, lambda),
                    v_blocks: blocks_from(&pl.v_curves, lambda),
                    lambda,
                }
            })
            .collect()
    }

    /// Realized rate at a trade-off point without measuring distortion.
    pub fn rate_for(&self, lambda: f64) -> f64 {
        budget_for(&self.dims, &self.allocate(lambda)).rate()
    }

    /// Quantizes every layer per the plans and returns the network.
    pub fn quantized_network(&self, net: &Network, plans: &[LayerPlan]) -> Result<Network> {
        let mut out = net.clone();
        for (l, (pl, plan)) in self.layers.iter().zip(plans).enumerate() {
            out = out.with_layer(l, pl.transformed.quantize_with(plan)?)?;
        }
        Ok(out)
    }

    /// Full measurement at one trade-off point: joint quantization of all
    /// layers, end-to-end distortion, rate, agreement, and speed-up.
    pub fn evaluate(&self, net: &Network, calib: &SignalBatch, lambda: f64) -> Result<SweepPoint> {
        let plans = self.allocate(lambda);
        let budget = budget_for(&self.dims, &plans);
        let quantized = self.quantized_network(net, &plans)?;
        let reference = net.forward(calib)?;
        let decoded = quantized.forward(calib)?;
        let distortion = batch_sq_distance(&reference, &decoded);
        let accuracy = top1_agreement(&reference, &decoded);
        let flop_ratio = network_acceleration(net, &plans);
        Ok(SweepPoint {
            lambda,
            plans,
            budget,
            distortion,
            accuracy,
            flop_ratio,
        })
    }
}

/// Result of compressing at one trade-off point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub lambda: f64,
    pub plans: Vec<LayerPlan>,
    pub budget: BitBudget,
    /// End-to-end output distortion with every layer quantized.
    pub distortion: f64,
    /// Top-1 agreement with the unquantized model on the calibration set.
    pub accuracy: f64,
    /// Multiplication ratio of factored inference, input-size weighted.
    pub flop_ratio: f64,
}

/// Fraction of samples whose argmax output coordinate survives quantization.
pub fn top1_agreement(reference: &SignalBatch, quantized: &SignalBatch) -> f64 {
    let mut agree = 0usize;
    for s in 0..reference.count() {
        if argmax(reference.sample(s)) == argmax(quantized.sample(s)) {
            agree += 1;
        }
    }
    agree as f64 / reference.count() as f64
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Sweeps the rate–distortion frontier over a list of trade-off points.
/// Curves are built once and shared.
pub fn lagrangian_sweep(
    net: &Network,
    calib: &SignalBatch,
    config: &SweepConfig,
    lambdas: &[f64],
) -> Result<Vec<SweepPoint>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParam("lambda list is empty".into()));
    }
    let prepared = prepare(net, calib, config)?;
    lambdas
        .par_iter()
        .map(|&lambda| prepared.evaluate(net, calib, lambda))
        .collect()
}

/// Fixed CSV schema for frontier reports.
pub const FRONTIER_CSV_HEADER: &str = "lambda,rate_bits_per_weight,distortion,accuracy_proxy,flop_ratio";

pub fn frontier_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(FRONTIER_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{:e},{},{:e},{},{}\n",
            p.lambda,
            p.budget.rate(),
            p.distortion,
            p.accuracy,
            p.flop_ratio
        ));
    }
    out
}

/// Largest useful trade-off value: above this every unit retires to zero
/// bits.
fn lambda_ceiling(prepared: &Prepared) -> f64 {
    let mut ceil = 0.0_f64;
    for pl in &prepared.layers {
        for c in pl.t_curves.iter().chain(&pl.s_curves).chain(&pl.v_curves) {
            let dmin = c.d.iter().cloned().fold(f64::INFINITY, f64::min);
            let slope = (c.d[0] - dmin) / c.weights as f64;
            ceil = ceil.max(slope);
        }
    }
    (ceil * 2.0).max(f64::MIN_POSITIVE)
}

/// Bisects the trade-off parameter until the realized rate lands within
/// `rel_tol` of `target_rate`, then fully evaluates that point.
pub fn compress_to_rate(
    net: &Network,
    calib: &SignalBatch,
    config: &SweepConfig,
    target_rate: f64,
    rel_tol: f64,
) -> Result<SweepPoint> {
    if target_rate <= 0.0 || !target_rate.is_finite() {
        return Err(Error::InvalidParam("target rate must be positive".into()));
    }
    let prepared = prepare(net, calib, config)?;
    let max_rate = prepared.rate_for(0.0);
    if target_rate > max_rate * (1.0 + rel_tol) {
        return Err(Error::InvalidParam(format!(
            "target rate {target_rate:.3} exceeds the maximum achievable {max_rate:.3}"
        )));
    }
    let within = |r: f64| (r - target_rate).abs() <= rel_tol * target_rate;
    if within(max_rate) {
        return prepared.evaluate(net, calib, 0.0);
    }
    let mut lo = 0.0_f64; // rate(lo) >= target
    let mut hi = lambda_ceiling(&prepared); // rate(hi) ~ 0 <= target
    let mut best = (0.0_f64, max_rate);
    for _ in 0..200 {
        let mid = if lo == 0.0 { hi * 0.5 } else { (lo * hi).sqrt() };
        let rate = prepared.rate_for(mid);
        if (rate - target_rate).abs() < (best.1 - target_rate).abs() {
            best = (mid, rate);
        }
        if within(rate) {
            return prepared.evaluate(net, calib, mid);
        }
        if rate > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo.max(f64::MIN_POSITIVE) < 1.0 + 1e-12 {
            break;
        }
    }
    if within(best.1) {
        prepared.evaluate(net, calib, best.0)
    } else {
        Err(Error::InvalidParam(format!(
            "could not realize rate {target_rate:.3} within {:.1}% (closest {:.3}); \
             the allocation granularity is too coarse for this model — raise the block count",
            rel_tol * 100.0,
            best.1
        )))
    }
}
