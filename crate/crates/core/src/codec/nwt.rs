//! NWT tensor container: the input interchange format for models and
//! calibration data.
//!
//! Little-endian throughout. Layout:
//!
//! ```text
//! "NWT1"  u32 record_count  record*
//! record: u16 name_len, name bytes (UTF-8),
//!         u8 kind (0 dense-layer, 1 conv-layer, 2 tensor),
//!         u32 n, m, a, b        (tensors: count, channels, H, W)
//!         f32 payload [n*m*a*b], row-major
//!         u8 bias_flag, bias f32 [n] when set (layers only)
//! ```
//!
//! Networks are stored as `layer.<i>` records in order plus two tensor
//! records: `meta.input_shape` (channels, height, width) and
//! `meta.activations` (0 = identity, 1 = relu per layer).

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::model::{Activation, LayerDims, Network, Shape, SignalBatch, WeightTensor};

pub const NWT_MAGIC: &[u8; 4] = b"NWT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    DenseLayer,
    ConvLayer,
    Tensor,
}

impl RecordKind {
    fn to_byte(self) -> u8 {
        match self {
            RecordKind::DenseLayer => 0,
            RecordKind::ConvLayer => 1,
            RecordKind::Tensor => 2,
        }
    }

    fn from_byte(b: u8, offset: u64) -> Result<Self> {
        match b {
            0 => Ok(RecordKind::DenseLayer),
            1 => Ok(RecordKind::ConvLayer),
            2 => Ok(RecordKind::Tensor),
            other => Err(Error::format(offset, format!("unknown record kind {other}"))),
        }
    }
}

/// One named tensor in an NWT file.
#[derive(Debug, Clone, PartialEq)]
pub struct NwtRecord {
    pub name: String,
    pub kind: RecordKind,
    pub dims: [u32; 4],
    pub payload: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl NwtRecord {
    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }
}

/// Parses a whole NWT byte image.
pub fn parse_records(bytes: &[u8]) -> Result<Vec<NwtRecord>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != NWT_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:02x?}, expected \"NWT1\""),
        ));
    }
    let count = c.u32("record count")?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name_off = c.pos as u64;
        let name = std::str::from_utf8(c.take(name_len, "record name")?)
            .map_err(|_| Error::format(name_off, "record name is not UTF-8"))?
            .to_string();
        let kind_off = c.pos as u64;
        let kind = RecordKind::from_byte(c.u8("record kind")?, kind_off)?;
        let dims_off = c.pos as u64;
        let mut dims = [0u32; 4];
        for d in &mut dims {
            *d = c.u32("dims")?;
        }
        let elems = dims.iter().map(|&d| d as u64).product::<u64>();
        if dims.contains(&0) || elems > (u32::MAX as u64) {
            return Err(Error::format(
                dims_off,
                format!("invalid dims {dims:?} in record \"{name}\""),
            ));
        }
        let payload_bytes = c.take(4 * elems as usize, "payload")?;
        let mut payload = vec![0f32; elems as usize];
        LittleEndian::read_f32_into(payload_bytes, &mut payload);
        let bias = match c.u8("bias flag")? {
            0 => None,
            1 => {
                if kind == RecordKind::Tensor {
                    return Err(Error::format(
                        c.pos as u64 - 1,
                        format!("tensor record \"{name}\" cannot carry a bias"),
                    ));
                }
                let n = dims[0] as usize;
                let bias_bytes = c.take(4 * n, "bias")?;
                let mut bias = vec![0f32; n];
                LittleEndian::read_f32_into(bias_bytes, &mut bias);
                Some(bias)
            }
            other => {
                return Err(Error::format(
                    c.pos as u64 - 1,
                    format!("bias flag must be 0 or 1, got {other}"),
                ))
            }
        };
        records.push(NwtRecord { name, kind, dims, payload, bias });
    }
    if c.pos != bytes.len() {
        return Err(Error::format(
            c.pos as u64,
            format!("{} trailing bytes after last record", bytes.len() - c.pos),
        ));
    }
    Ok(records)
}

/// Serializes records to an NWT byte image; `parse_records` inverts this
/// byte-for-byte.
pub fn serialize_records(records: &[NwtRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(NWT_MAGIC);
    let mut buf4 = [0u8; 4];
    LittleEndian::write_u32(&mut buf4, records.len() as u32);
    out.extend_from_slice(&buf4);
    for r in records {
        assert!(r.name.len() <= u16::MAX as usize, "record name too long");
        assert_eq!(r.payload.len(), r.element_count(), "payload does not match dims");
        if let Some(b) = &r.bias {
            assert_eq!(b.len(), r.dims[0] as usize, "bias does not match dims");
        }
        let mut buf2 = [0u8; 2];
        LittleEndian::write_u16(&mut buf2, r.name.len() as u16);
        out.extend_from_slice(&buf2);
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.kind.to_byte());
        for &d in &r.dims {
            LittleEndian::write_u32(&mut buf4, d);
            out.extend_from_slice(&buf4);
        }
        for &v in &r.payload {
            LittleEndian::write_f32(&mut buf4, v);
            out.extend_from_slice(&buf4);
        }
        match &r.bias {
            None => out.push(0),
            Some(b) => {
                out.push(1);
                for &v in b {
                    LittleEndian::write_f32(&mut buf4, v);
                    out.extend_from_slice(&buf4);
                }
            }
        }
    }
    out
}

const META_INPUT_SHAPE: &str = "meta.input_shape";
const META_ACTIVATIONS: &str = "meta.activations";

/// Encodes a network as NWT records (f32 weights).
pub fn network_to_records(net: &Network) -> Vec<NwtRecord> {
    let mut records = Vec::with_capacity(net.len() + 2);
    let shape = net.input_shape();
    records.push(NwtRecord {
        name: META_INPUT_SHAPE.into(),
        kind: RecordKind::Tensor,
        dims: [1, 3, 1, 1],
        payload: vec![shape.channels as f32, shape.height as f32, shape.width as f32],
        bias: None,
    });
    records.push(NwtRecord {
        name: META_ACTIVATIONS.into(),
        kind: RecordKind::Tensor,
        dims: [net.len() as u32, 1, 1, 1],
        payload: (0..net.len())
            .map(|l| match net.activation(l) {
                Activation::Identity => 0.0,
                Activation::Relu => 1.0,
            })
            .collect(),
        bias: None,
    });
    for (l, (layer, _)) in net.layers().iter().enumerate() {
        let d = layer.dims();
        records.push(NwtRecord {
            name: format!("layer.{l}"),
            kind: if d.is_dense() { RecordKind::DenseLayer } else { RecordKind::ConvLayer },
            dims: [d.n as u32, d.m as u32, d.a as u32, d.b as u32],
            payload: layer.data().iter().map(|&v| v as f32).collect(),
            bias: if layer.bias().iter().all(|&b| b == 0.0) {
                None
            } else {
                Some(layer.bias().iter().map(|&v| v as f32).collect())
            },
        });
    }
    records
}

/// Decodes a network from NWT records, honoring the `meta.*` conventions.
pub fn network_from_records(records: &[NwtRecord]) -> Result<Network> {
    let find = |name: &str| records.iter().find(|r| r.name == name);
    let shape_rec = find(META_INPUT_SHAPE).ok_or_else(|| {
        Error::format(0, "model file lacks a \"meta.input_shape\" record")
    })?;
    if shape_rec.payload.len() != 3 {
        return Err(Error::format(0, "meta.input_shape must hold 3 values"));
    }
    let input_shape = Shape::new(
        shape_rec.payload[0] as usize,
        shape_rec.payload[1] as usize,
        shape_rec.payload[2] as usize,
    );
    let act_rec = find(META_ACTIVATIONS)
        .ok_or_else(|| Error::format(0, "model file lacks a \"meta.activations\" record"))?;
    let layer_recs: Vec<&NwtRecord> = records
        .iter()
        .filter(|r| r.kind != RecordKind::Tensor)
        .collect();
    if act_rec.payload.len() != layer_recs.len() {
        return Err(Error::format(
            0,
            format!(
                "meta.activations lists {} layers but {} layer records exist",
                act_rec.payload.len(),
                layer_recs.len()
            ),
        ));
    }
    let mut layers = Vec::with_capacity(layer_recs.len());
    for (rec, &act) in layer_recs.iter().zip(act_rec.payload.iter()) {
        let dims = LayerDims::new(
            rec.dims[0] as usize,
            rec.dims[1] as usize,
            rec.dims[2] as usize,
            rec.dims[3] as usize,
        );
        let data: Vec<f64> = rec.payload.iter().map(|&v| v as f64).collect();
        let bias: Vec<f64> = match &rec.bias {
            Some(b) => b.iter().map(|&v| v as f64).collect(),
            None => vec![0.0; dims.n],
        };
        let activation = if act == 0.0 { Activation::Identity } else { Activation::Relu };
        layers.push((WeightTensor::with_bias(dims, data, bias)?, activation));
    }
    Network::new(layers, input_shape)
}

/// Encodes a signal batch as one tensor record named `name`.
pub fn batch_to_record(name: &str, batch: &SignalBatch) -> NwtRecord {
    let s = batch.shape();
    NwtRecord {
        name: name.into(),
        kind: RecordKind::Tensor,
        dims: [batch.count() as u32, s.channels as u32, s.height as u32, s.width as u32],
        payload: batch.data().iter().map(|&v| v as f32).collect(),
        bias: None,
    }
}

/// Decodes a signal batch from a tensor record.
pub fn batch_from_record(rec: &NwtRecord) -> Result<SignalBatch> {
    if rec.kind != RecordKind::Tensor {
        return Err(Error::format(0, format!("record \"{}\" is not a tensor", rec.name)));
    }
    let shape = Shape::new(rec.dims[1] as usize, rec.dims[2] as usize, rec.dims[3] as usize);
    SignalBatch::new(
        rec.dims[0] as usize,
        shape,
        rec.payload.iter().map(|&v| v as f64).collect(),
    )
}

/// Reads a network from an NWT file.
pub fn read_network(path: &std::path::Path) -> Result<Network> {
    network_from_records(&parse_records(&std::fs::read(path)?)?)
}

/// Writes a network to an NWT file.
pub fn write_network(path: &std::path::Path, net: &Network) -> Result<()> {
    std::fs::write(path, serialize_records(&network_to_records(net)))?;
    Ok(())
}

/// Reads the first tensor record of an NWT file as a calibration batch.
pub fn read_batch(path: &std::path::Path) -> Result<SignalBatch> {
    let records = parse_records(&std::fs::read(path)?)?;
    let rec = records
        .iter()
        .find(|r| r.kind == RecordKind::Tensor && !r.name.starts_with("meta."))
        .ok_or_else(|| Error::format(0, "no tensor record in calibration file"))?;
    batch_from_record(rec)
}

/// Writes a calibration batch to an NWT file.
pub fn write_batch(path: &std::path::Path, batch: &SignalBatch) -> Result<()> {
    let records = vec![batch_to_record("calibration", batch)];
    std::fs::write(path, serialize_records(&records))?;
    Ok(())
}
