//! Whole-pipeline integration: sweep, serialize, decode, re-measure.

use tq_core::codec::{decode_tqz, encode_tqz};
use tq_core::covariance::Axis;
use tq_core::model::batch_sq_distance;
use tq_core::rdopt::{lagrangian_sweep, CurveConfig, SweepConfig};
use tq_core::toy::{Correlation, ToySpec};
use tq_core::transform::TransformKind;

#[test]
fn reported_distortion_survives_serialization_exactly() {
    let spec = ToySpec {
        input_shape: tq_core::model::Shape::new(4, 6, 6),
        layers: vec![
            tq_core::model::LayerDims::new(6, 4, 3, 3),
            tq_core::model::LayerDims::new(4, 6, 3, 3),
        ],
        correlation: Correlation::Ar1Input { rho: 0.85 },
        weight_scale: 1.0,
        bias_scale: 0.1,
    };
    let net = spec.build(0xD1).unwrap();
    let calib = spec.calibration(0xD1, 8);
    for (kind, axis) in [
        (TransformKind::None, Axis::Column),
        (TransformKind::Klt, Axis::Row),
        (TransformKind::Elt, Axis::Row),
    ] {
        let mut cfg = SweepConfig::new(kind, axis);
        cfg.curve = CurveConfig { blocks: 4, max_bits: 6, steps: Some(8) };
        let points = lagrangian_sweep(&net, &calib, &cfg, &[1e-6, 1e-4]).unwrap();
        for point in &points {
            let (bytes, meta) = encode_tqz(&net, &point.plans, point.lambda).unwrap();
            assert_eq!(meta.budget().total_bits(), point.budget.total_bits());
            assert_eq!(meta.budget().rate(), point.budget.rate());
            let (decoded, meta2) = decode_tqz(&bytes).unwrap();
            assert_eq!(meta2.budget().total_bits(), point.budget.total_bits());
            // the decoded network reproduces the in-memory quantized model
            // bit-for-bit, so the measured distortion is identical too
            let reference = net.forward(&calib).unwrap();
            let decoded_out = decoded.forward(&calib).unwrap();
            let d = batch_sq_distance(&reference, &decoded_out);
            assert_eq!(
                d, point.distortion,
                "kind {kind} axis {axis} lambda {}",
                point.lambda
            );
        }
    }
}

#[test]
fn per_layer_nonzero_rows_match_serialized_headers() {
    let spec = ToySpec::conv3(Correlation::Ar1Input { rho: 0.9 });
    let net = spec.build(0xD2).unwrap();
    let calib = spec.calibration(0xD2, 8);
    let mut cfg = SweepConfig::new(TransformKind::Klt, Axis::Row);
    cfg.curve = CurveConfig { blocks: 6, max_bits: 6, steps: Some(8) };
    let points = lagrangian_sweep(&net, &calib, &cfg, &[3e-4]).unwrap();
    let point = &points[0];
    let (bytes, _) = encode_tqz(&net, &point.plans, point.lambda).unwrap();
    let (_, meta) = decode_tqz(&bytes).unwrap();
    let mut pruned_any = false;
    for (plan, lm) in point.plans.iter().zip(&meta.layers) {
        assert_eq!(plan.nonzero_rows(), lm.nonzero_rows);
        pruned_any |= lm.nonzero_rows < meta.axis.channels(lm.dims);
    }
    // at this trade-off some rows must actually retire
    assert!(pruned_any, "expected pruned rows at a low-rate point");
}
