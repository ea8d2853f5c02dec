//! Uniform scalar quantization with signed midtread semantics.
//!
//! A quantizer is a bit-depth `R` and a step-size `delta`. At `R = 0` the
//! output is identically zero. Otherwise values map to one of `2^R` levels:
//! `index = clip(round(v / delta), -2^(R-1), 2^(R-1) - 1)` with
//! half-away-from-zero rounding, reconstructing as `delta * index`.

use crate::error::{Error, Result};

/// Largest supported bit-depth.
pub const MAX_BITS: u8 = 16;

/// Bit-depth and step-size of a uniform scalar quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    bits: u8,
    step: f64,
}

impl QuantParams {
    pub fn new(bits: u8, step: f64) -> Result<Self> {
        if bits > MAX_BITS {
            return Err(Error::InvalidParam(format!(
                "bit-depth {bits} exceeds maximum {MAX_BITS}"
            )));
        }
        if bits > 0 && !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "step-size must be positive and finite, got {step}"
            )));
        }
        Ok(QuantParams { bits, step })
    }

    /// The zero-rate quantizer: everything maps to 0.
    pub fn zero() -> Self {
        QuantParams { bits: 0, step: 0.0 }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Smallest representable index, `-2^(R-1)`.
    pub fn index_min(&self) -> i32 {
        if self.bits == 0 {
            0
        } else {
            -(1i32 << (self.bits - 1))
        }
    }

    /// Largest representable index, `2^(R-1) - 1`.
    pub fn index_max(&self) -> i32 {
        if self.bits == 0 {
            0
        } else {
            (1i32 << (self.bits - 1)) - 1
        }
    }
}

/// Quantizes a single value, returning `(index, reconstruction)`.
#[inline]
pub fn quantize_value(v: f64, p: QuantParams) -> (i32, f64) {
    if p.bits == 0 {
        return (0, 0.0);
    }
    // f64::round ties away from zero, matching the symmetric clip range.
    let raw = (v / p.step).round();
    let lo = p.index_min() as f64;
    let hi = p.index_max() as f64;
    let idx = raw.clamp(lo, hi) as i32;
    (idx, p.step * idx as f64)
}

/// Quantizes a slice, returning the index array and the dequantized values.
pub fn quantize(values: &[f64], p: QuantParams) -> (Vec<i32>, Vec<f64>) {
    let mut indices = Vec::with_capacity(values.len());
    let mut deq = Vec::with_capacity(values.len());
    for &v in values {
        let (i, q) = quantize_value(v, p);
        indices.push(i);
        deq.push(q);
    }
    (indices, deq)
}

/// Reconstruction from stored indices: `delta * index`.
pub fn dequantize(indices: &[i32], p: QuantParams) -> Vec<f64> {
    if p.bits == 0 {
        return vec![0.0; indices.len()];
    }
    indices.iter().map(|&i| p.step * i as f64).collect()
}

/// Mean squared difference between a source and its quantized version.
pub fn source_distortion(original: &[f64], dequantized: &[f64]) -> Result<f64> {
    if original.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if original.len() != dequantized.len() {
        return Err(Error::shape(
            "source distortion",
            format!("{} values", original.len()),
            format!("{} values", dequantized.len()),
        ));
    }
    let sum: f64 = original
        .iter()
        .zip(dequantized)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / original.len() as f64)
}
