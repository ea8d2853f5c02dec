//! Bit-exact file formats: the NWT tensor container (models and calibration
//! data in) and the TQZ compressed-model container (quantized models out).

mod bitpack;
pub mod nwt;
pub mod tqz;

pub use bitpack::{pack_indices, packed_len, unpack_indices};
pub use nwt::{
    batch_from_record, batch_to_record, network_from_records, network_to_records, parse_records,
    read_batch, read_network, serialize_records, write_batch, write_network, NwtRecord, RecordKind,
    NWT_MAGIC,
};
pub use tqz::{decode_tqz, encode_tqz, read_tqz, write_tqz, TqzLayerMeta, TqzMeta, TQZ_MAGIC};
