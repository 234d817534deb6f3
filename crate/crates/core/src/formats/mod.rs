//! On-disk formats: BSNT tensors, tensor packs and flat `key = value` text.

mod bsnt;
mod kv;

pub use bsnt::{read_bsnt, read_pack, write_bsnt, write_pack, TensorFile};
pub use kv::KvMap;
