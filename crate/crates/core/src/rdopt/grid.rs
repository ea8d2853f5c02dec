//! Step-size search grids.
//!
//! Transformed weights can sit many octaves below 1, so grids are anchored to
//! the unit being quantized: they span `[sigma * 2^-(R+4), sigma * 2^2]`
//! where `sigma` is the unit's largest absolute value. The default grid walks
//! that span at ratio sqrt(2); an explicit point count spreads the same span
//! geometrically, which is cheaper and mirrors the coarse dyadic search the
//! allocation was tuned with.

/// Geometric step-size grid for a unit with scale `sigma` at bit-depth
/// `bits`. `steps = None` yields the ratio-sqrt(2) grid; `Some(s)` spans the
/// same range with `s` points. Always non-empty and ascending.
pub fn delta_grid(sigma: f64, bits: u8, steps: Option<usize>) -> Vec<f64> {
    let sigma = if sigma > 0.0 && sigma.is_finite() { sigma } else { 1.0 };
    let lo_exp = -(bits as f64 + 4.0);
    let hi_exp = 2.0;
    match steps {
        None => {
            let count = (2.0 * (hi_exp - lo_exp)) as usize + 1;
            (0..count)
                .map(|i| sigma * (lo_exp + i as f64 * 0.5).exp2())
                .collect()
        }
        Some(0) | Some(1) => vec![sigma * ((lo_exp + hi_exp) * 0.5).exp2()],
        Some(s) => {
            let step = (hi_exp - lo_exp) / (s - 1) as f64;
            (0..s).map(|i| sigma * (lo_exp + i as f64 * step).exp2()).collect()
        }
    }
}
