//! TQZ compressed-model container.
//!
//! Little-endian. Layout:
//!
//! ```text
//! "TQZ1"  u8 version  u8 kind  u8 axis  u32 layer_count  f64 lambda
//! u32 in_channels, in_height, in_width
//! per layer:
//!   u32 n, m, a, b     u8 activation    u8 bias_flag  [f64 bias * n]
//!   u8 raw_fallback    (kind = none only)
//!   raw: f32 * n*m*a*b
//!   else:
//!     u32 stored_rows  u32 nonzero_rows (k)  u32 t_block_count
//!     t blocks:  u8 R, f64 delta, packed indices (rows * vector_len each)
//!     kind != none: u32 basis_cols, u32 s_block_count, s blocks
//!     kind = 2d:    u32 v_cols,     u32 v_block_count, v blocks
//! ```
//!
//! Block boundaries are not stored: both sides derive them from
//! `partition_blocks(stored_rows, block_count)`. Indices pack LSB-first at
//! `R` bits after a `+2^(R-1)` offset; `R = 0` blocks carry no payload.
//! Decoding reproduces the encoder-side dequantized weights bit-exactly.

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::DMatrix;

use crate::covariance::Axis;
use crate::error::{Error, Result};
use crate::model::{Activation, LayerDims, Network, Shape, WeightTensor};
use crate::quant::{dequantize, quantize, QuantParams, MAX_BITS};
use crate::rdopt::{
    partition_blocks, stored_basis_cols, BitBudget, BlockAssignment, LayerPlan,
    TransformedLayer,
};
use crate::transform::TransformKind;

use super::bitpack::{pack_indices, packed_len, unpack_indices};

pub const TQZ_MAGIC: &[u8; 4] = b"TQZ1";
pub const TQZ_VERSION: u8 = 1;

fn kind_to_byte(kind: TransformKind) -> Result<u8> {
    Ok(match kind {
        TransformKind::None => 0,
        TransformKind::Klt => 1,
        TransformKind::Elt => 2,
        TransformKind::TwoD => 3,
        TransformKind::IntraKernel => {
            return Err(Error::Unsupported("intra-kernel plans are not serializable".into()))
        }
    })
}

fn kind_from_byte(b: u8, offset: u64) -> Result<TransformKind> {
    Ok(match b {
        0 => TransformKind::None,
        1 => TransformKind::Klt,
        2 => TransformKind::Elt,
        3 => TransformKind::TwoD,
        other => return Err(Error::format(offset, format!("unknown transform kind {other}"))),
    })
}

/// Per-layer facts recovered from (or recorded into) a TQZ stream.
#[derive(Debug, Clone)]
pub struct TqzLayerMeta {
    pub dims: LayerDims,
    /// Leading transform rows carrying bits.
    pub nonzero_rows: usize,
    pub index_bits: u64,
    pub basis_bits: u64,
}

/// Stream-level metadata.
#[derive(Debug, Clone)]
pub struct TqzMeta {
    pub kind: TransformKind,
    pub axis: Axis,
    pub lambda: f64,
    pub layers: Vec<TqzLayerMeta>,
}

impl TqzMeta {
    /// Payload accounting identical to the rate engine's budget.
    pub fn budget(&self) -> BitBudget {
        BitBudget {
            per_layer: self
                .layers
                .iter()
                .map(|l| crate::rdopt::LayerBits {
                    weights: l.dims.weight_count() as u64,
                    index_bits: l.index_bits,
                    basis_bits: l.basis_bits,
                })
                .collect(),
        }
    }
}

struct Writer {
    out: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.out.push(v);
    }
    fn u32(&mut self, v: u32) {
        let mut b = [0u8; 4];
        LittleEndian::write_u32(&mut b, v);
        self.out.extend_from_slice(&b);
    }
    fn f64(&mut self, v: f64) {
        let mut b = [0u8; 8];
        LittleEndian::write_f64(&mut b, v);
        self.out.extend_from_slice(&b);
    }
    fn f32(&mut self, v: f32) {
        let mut b = [0u8; 4];
        LittleEndian::write_f32(&mut b, v);
        self.out.extend_from_slice(&b);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8, what)?))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(LittleEndian::read_f32(self.take(4, what)?))
    }
}

fn write_blocks(
    w: &mut Writer,
    mat: &DMatrix<f64>,
    blocks: &[BlockAssignment],
    by_rows: bool,
) -> Result<u64> {
    w.u32(blocks.len() as u32);
    let mut bits = 0u64;
    for b in blocks {
        if b.q.bits() > MAX_BITS {
            return Err(Error::InvalidParam(format!("bit-depth {} exceeds 16", b.q.bits())));
        }
        let vals = if by_rows {
            crate::rdopt::plan_internals::gather_row_block(mat, b.start, b.len)
        } else {
            crate::rdopt::plan_internals::gather_col_block(mat, b.start, b.len)
        };
        let (indices, _) = quantize(&vals, b.q);
        w.u8(b.q.bits());
        w.f64(b.q.step());
        let packed = pack_indices(&indices, b.q)?;
        w.out.extend_from_slice(&packed);
        bits += vals.len() as u64 * b.q.bits() as u64;
    }
    Ok(bits)
}

fn read_blocks(
    r: &mut Reader,
    rows: usize,
    cols: usize,
    by_rows: bool,
    what: &str,
) -> Result<(DMatrix<f64>, Vec<BlockAssignment>, u64)> {
    let count = r.u32(&format!("{what} block count"))? as usize;
    let units = if by_rows { rows } else { cols };
    let unit_len = if by_rows { cols } else { rows };
    let parts = partition_blocks(units, count);
    if parts.len() != count {
        return Err(Error::format(
            r.pos as u64,
            format!("{what}: {count} blocks declared for {units} units"),
        ));
    }
    let mut mat = DMatrix::zeros(rows, cols);
    let mut blocks = Vec::with_capacity(count);
    let mut bits = 0u64;
    for (start, len) in parts {
        let depth = r.u8(&format!("{what} block depth"))?;
        if depth > MAX_BITS {
            return Err(Error::format(
                r.pos as u64 - 1,
                format!("bit-depth {depth} exceeds {MAX_BITS}"),
            ));
        }
        let step = r.f64(&format!("{what} block step"))?;
        let q = if depth == 0 {
            QuantParams::zero()
        } else {
            QuantParams::new(depth, step)
                .map_err(|e| Error::format(r.pos as u64, e.to_string()))?
        };
        let n_vals = len * unit_len;
        let payload = r.take(packed_len(n_vals, depth), &format!("{what} block payload"))?;
        let indices = unpack_indices(payload, n_vals, q)?;
        let deq = dequantize(&indices, q);
        if by_rows {
            crate::rdopt::plan_internals::scatter_row_block(&mut mat, start, len, &deq);
        } else {
            crate::rdopt::plan_internals::scatter_col_block(&mut mat, start, len, &deq);
        }
        blocks.push(BlockAssignment { start, len, q });
        bits += n_vals as u64 * depth as u64;
    }
    Ok((mat, blocks, bits))
}

/// Serializes a quantized model: the network's layers are re-quantized per
/// the plans (deterministically, so encoder-side dequantized weights match
/// the decoder's) and written with bit-packed indices.
pub fn encode_tqz(net: &Network, plans: &[LayerPlan], lambda: f64) -> Result<(Vec<u8>, TqzMeta)> {
    if plans.len() != net.len() {
        return Err(Error::InvalidParam(format!(
            "expected {} plans, got {}",
            net.len(),
            plans.len()
        )));
    }
    let kind = plans.first().map(|p| p.transform.kind).unwrap_or(TransformKind::None);
    let axis = plans.first().map(|p| p.transform.axis).unwrap_or(Axis::Column);
    for p in plans {
        if p.transform.kind != kind || p.transform.axis != axis {
            return Err(Error::InvalidParam(
                "all layer plans must share one transform kind and axis".into(),
            ));
        }
    }
    let mut w = Writer { out: Vec::new() };
    w.out.extend_from_slice(TQZ_MAGIC);
    w.u8(TQZ_VERSION);
    w.u8(kind_to_byte(kind)?);
    w.u8(match axis {
        Axis::Column => 0,
        Axis::Row => 1,
    });
    w.u32(net.len() as u32);
    w.f64(lambda);
    let shape = net.input_shape();
    w.u32(shape.channels as u32);
    w.u32(shape.height as u32);
    w.u32(shape.width as u32);

    let mut metas = Vec::with_capacity(net.len());
    for (l, plan) in plans.iter().enumerate() {
        let layer = net.layer(l);
        let d = layer.dims();
        w.u32(d.n as u32);
        w.u32(d.m as u32);
        w.u32(d.a as u32);
        w.u32(d.b as u32);
        w.u8(match net.activation(l) {
            Activation::Identity => 0,
            Activation::Relu => 1,
        });
        let has_bias = layer.bias().iter().any(|&b| b != 0.0);
        w.u8(u8::from(has_bias));
        if has_bias {
            for &b in layer.bias() {
                w.f64(b);
            }
        }
        if kind == TransformKind::None {
            let fallback = plan.t_blocks.is_empty();
            w.u8(u8::from(fallback));
            if fallback {
                for &v in layer.data() {
                    w.f32(v as f32);
                }
                metas.push(TqzLayerMeta {
                    dims: d,
                    nonzero_rows: axis.channels(d),
                    index_bits: 32 * d.weight_count() as u64,
                    basis_bits: 0,
                });
                continue;
            }
        }
        let tl = TransformedLayer::new(layer, &plan.transform)?;
        w.u32(tl.stored_rows() as u32);
        w.u32(plan.nonzero_rows() as u32);
        let index_bits = write_blocks(&mut w, &tl.t, &plan.t_blocks, true)?;
        let mut basis_bits = 0;
        if kind != TransformKind::None {
            let s = tl.s.as_ref().expect("transform carries a basis");
            w.u32(s.ncols() as u32);
            basis_bits += write_blocks(&mut w, s, &plan.s_blocks, false)?;
        }
        if kind == TransformKind::TwoD {
            let v = tl.v.as_ref().expect("2d transform carries a second basis");
            w.u32(v.ncols() as u32);
            basis_bits += write_blocks(&mut w, v, &plan.v_blocks, false)?;
        }
        metas.push(TqzLayerMeta {
            dims: d,
            nonzero_rows: plan.nonzero_rows(),
            index_bits,
            basis_bits,
        });
    }
    Ok((
        w.out,
        TqzMeta {
            kind,
            axis,
            lambda,
            layers: metas,
        },
    ))
}

/// Decodes a TQZ stream into the reconstructed network and its metadata.
pub fn decode_tqz(bytes: &[u8]) -> Result<(Network, TqzMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != TQZ_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:02x?}, expected \"TQZ1\"")));
    }
    let version = r.u8("version")?;
    if version != TQZ_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let kind_off = r.pos as u64;
    let kind = kind_from_byte(r.u8("transform kind")?, kind_off)?;
    let axis = match r.u8("axis")? {
        0 => Axis::Column,
        1 => Axis::Row,
        other => return Err(Error::format(r.pos as u64 - 1, format!("unknown axis {other}"))),
    };
    let layer_count = r.u32("layer count")? as usize;
    let lambda = r.f64("lambda")?;
    let shape = Shape::new(
        r.u32("input channels")? as usize,
        r.u32("input height")? as usize,
        r.u32("input width")? as usize,
    );

    let mut layers = Vec::with_capacity(layer_count);
    let mut metas = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let d = LayerDims::new(
            r.u32("n")? as usize,
            r.u32("m")? as usize,
            r.u32("a")? as usize,
            r.u32("b")? as usize,
        );
        if d.weight_count() == 0 || d.weight_count() > u32::MAX as usize {
            return Err(Error::format(r.pos as u64, format!("invalid dims {d}")));
        }
        let activation = match r.u8("activation")? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            other => {
                return Err(Error::format(r.pos as u64 - 1, format!("unknown activation {other}")))
            }
        };
        let bias = if r.u8("bias flag")? == 1 {
            let mut b = Vec::with_capacity(d.n);
            for _ in 0..d.n {
                b.push(r.f64("bias")?);
            }
            b
        } else {
            vec![0.0; d.n]
        };
        if kind == TransformKind::None && r.u8("fallback flag")? == 1 {
            let mut data = Vec::with_capacity(d.weight_count());
            for _ in 0..d.weight_count() {
                data.push(r.f32("raw weight")? as f64);
            }
            layers.push((WeightTensor::with_bias(d, data, bias)?, activation));
            metas.push(TqzLayerMeta {
                dims: d,
                nonzero_rows: axis.channels(d),
                index_bits: 32 * d.weight_count() as u64,
                basis_bits: 0,
            });
            continue;
        }
        let stored = r.u32("stored rows")? as usize;
        let expected_stored = match kind {
            TransformKind::None => axis.channels(d),
            TransformKind::TwoD => d.n,
            _ => stored_basis_cols(d, axis),
        };
        if stored != expected_stored {
            return Err(Error::format(
                r.pos as u64 - 4,
                format!("stored row count {stored} does not match dims (expected {expected_stored})"),
            ));
        }
        let k = r.u32("nonzero rows")? as usize;
        let len = match kind {
            TransformKind::TwoD => d.m * d.kernel_len(),
            _ => axis.vector_len(d),
        };
        let (t, _, index_bits) = read_blocks(&mut r, stored, len, true, "transform")?;
        let mut basis_bits = 0u64;
        let s = if kind != TransformKind::None {
            let cols = r.u32("basis cols")? as usize;
            if cols != stored && kind != TransformKind::TwoD {
                return Err(Error::format(
                    r.pos as u64 - 4,
                    format!("basis column count {cols} does not match stored rows {stored}"),
                ));
            }
            let ch = if kind == TransformKind::TwoD { d.n } else { axis.channels(d) };
            let (s, _, bits) = read_blocks(&mut r, ch, cols, false, "basis")?;
            basis_bits += bits;
            Some(s)
        } else {
            None
        };
        let v = if kind == TransformKind::TwoD {
            let cols = r.u32("second basis cols")? as usize;
            if cols != d.m {
                return Err(Error::format(
                    r.pos as u64 - 4,
                    format!("second basis column count {cols} does not match input channels {}", d.m),
                ));
            }
            let (v, _, bits) = read_blocks(&mut r, d.m, cols, false, "second basis")?;
            basis_bits += bits;
            Some(v)
        } else {
            None
        };
        let weights = crate::rdopt::plan_internals::reconstruct_weights(
            kind,
            axis,
            d,
            &t,
            s.as_ref(),
            v.as_ref(),
            bias,
        )?;
        layers.push((weights, activation));
        metas.push(TqzLayerMeta {
            dims: d,
            nonzero_rows: k,
            index_bits,
            basis_bits,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let net = Network::new(layers, shape)?;
    Ok((
        net,
        TqzMeta {
            kind,
            axis,
            lambda,
            layers: metas,
        },
    ))
}

/// Reads and decodes a TQZ file.
pub fn read_tqz(path: &std::path::Path) -> Result<(Network, TqzMeta)> {
    decode_tqz(&std::fs::read(path)?)
}

/// Encodes and writes a TQZ file.
pub fn write_tqz(
    path: &std::path::Path,
    net: &Network,
    plans: &[LayerPlan],
    lambda: f64,
) -> Result<TqzMeta> {
    let (bytes, meta) = encode_tqz(net, plans, lambda)?;
    std::fs::write(path, bytes)?;
    Ok(meta)
}
