//! LSB-first packing of quantization indices at arbitrary bit widths.
//!
//! Signed indices are offset by `2^(R-1)` to unsigned fields of `R` bits
//! each, written least-significant-bit first. A block of `count` indices at
//! depth `R` occupies exactly `ceil(count * R / 8)` bytes; zero-depth blocks
//! occupy nothing.

use crate::error::{Error, Result};
use crate::quant::QuantParams;

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter { out: Vec::new(), acc: 0, filled: 0 }
    }

    fn push(&mut self, value: u32, bits: u8) {
        self.acc |= (value as u64) << self.filled;
        self.filled += bits as u32;
        while self.filled >= 8 {
            self.out.push((self.acc & 0xFF) as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.out.push((self.acc & 0xFF) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    available: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0, acc: 0, available: 0 }
    }

    fn pull(&mut self, bits: u8) -> Result<u32> {
        while self.available < bits as u32 {
            let byte = *self
                .bytes
                .get(self.pos)
                .ok_or_else(|| Error::format(self.pos as u64, "truncated index payload"))?;
            self.acc |= (byte as u64) << self.available;
            self.available += 8;
            self.pos += 1;
        }
        let mask = (1u64 << bits) - 1;
        let v = (self.acc & mask) as u32;
        self.acc >>= bits;
        self.available -= bits as u32;
        Ok(v)
    }
}

/// Exact byte length of a packed block.
pub fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}

/// Packs signed indices at the given depth. Every index must fit the signed
/// range of the depth; zero depth packs to nothing.
pub fn pack_indices(indices: &[i32], p: QuantParams) -> Result<Vec<u8>> {
    let bits = p.bits();
    if bits == 0 {
        return Ok(Vec::new());
    }
    let offset = 1i64 << (bits - 1);
    let mut w = BitWriter::new();
    for &i in indices {
        if i < p.index_min() || i > p.index_max() {
            return Err(Error::InvalidParam(format!(
                "index {i} out of range for {bits}-bit packing"
            )));
        }
        w.push((i as i64 + offset) as u32, bits);
    }
    Ok(w.finish())
}

/// Unpacks `count` signed indices at the given depth.
pub fn unpack_indices(bytes: &[u8], count: usize, p: QuantParams) -> Result<Vec<i32>> {
    let bits = p.bits();
    if bits == 0 {
        return Ok(vec![0; count]);
    }
    let offset = 1i64 << (bits - 1);
    let mut r = BitReader::new(bytes);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let v = r.pull(bits)? as i64;
        out.push((v - offset) as i32);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_packed_two_bit_block() {
        // indices (-2,-1,0,1) at R=2: offsets (0,1,2,3), LSB-first = 0xE4
        let p = QuantParams::new(2, 1.0).unwrap();
        let bytes = pack_indices(&[-2, -1, 0, 1], p).unwrap();
        assert_eq!(bytes, vec![0xE4]);
        let back = unpack_indices(&bytes, 4, p).unwrap();
        assert_eq!(back, vec![-2, -1, 0, 1]);
    }

    #[test]
    fn zero_depth_has_no_payload() {
        let p = QuantParams::zero();
        assert!(pack_indices(&[0, 0, 0], p).unwrap().is_empty());
        assert_eq!(unpack_indices(&[], 3, p).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let p = QuantParams::new(2, 1.0).unwrap();
        assert!(pack_indices(&[2], p).is_err());
        assert!(pack_indices(&[-3], p).is_err());
    }

    #[test]
    fn truncated_payload_is_detected() {
        let p = QuantParams::new(8, 1.0).unwrap();
        let bytes = pack_indices(&[1, 2, 3], p).unwrap();
        assert!(unpack_indices(&bytes[..2], 3, p).is_err());
    }

    proptest! {
        #[test]
        fn round_trips_at_any_depth(bits in 1u8..=16, seed in 0u64..500, count in 1usize..64) {
            let p = QuantParams::new(bits, 1.0).unwrap();
            let mut rng = crate::rng::seeded(seed);
            use rand::Rng as _;
            let indices: Vec<i32> = (0..count)
                .map(|_| rng.random_range(p.index_min()..=p.index_max()))
                .collect();
            let bytes = pack_indices(&indices, p).unwrap();
            prop_assert_eq!(bytes.len(), packed_len(count, bits));
            let back = unpack_indices(&bytes, count, p).unwrap();
            prop_assert_eq!(back, indices);
        }
    }
}
