//! Lagrangian bit-depth allocation over bit-depth–distortion curves.
//!
//! Each unit independently minimizes `D(R) + lambda * w * R`, where `w` is
//! the number of scalar weights the unit governs. Ties break toward the
//! smaller bit-depth.

use crate::quant::QuantParams;

use super::curves::RDCurve;

/// Lagrangian cost of giving `r` bits to this curve's unit.
pub fn objective(curve: &RDCurve, lambda: f64, r: u8) -> f64 {
    curve.d[r as usize] + lambda * curve.weights as f64 * r as f64
}

/// Optimal bit-depth and step for one unit at trade-off `lambda`.
pub fn allocate_unit(curve: &RDCurve, lambda: f64) -> QuantParams {
    let mut best_r = 0u8;
    let mut best_j = objective(curve, lambda, 0);
    for r in 1..=curve.max_bits() {
        let j = objective(curve, lambda, r);
        if j < best_j {
            best_j = j;
            best_r = r;
        }
    }
    curve.params(best_r)
}

/// Per-unit allocation across a curve set.
pub fn allocate_bits(curves: &[RDCurve], lambda: f64) -> Vec<QuantParams> {
    curves.iter().map(|c| allocate_unit(c, lambda)).collect()
}
