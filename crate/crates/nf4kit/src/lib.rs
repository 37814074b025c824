//! NF4 4-bit blockwise quantization: encode, store, and decode tensors
//! against the canonical 16-level NormalFloat code table.
//!
//! The crate is organized around one encode path and two decode paths that
//! must agree bit for bit:
//!
//! * [`codebook`] — the canonical code table and its invariants.
//! * [`quantize`] — absmax blockwise encoding into packed nibbles.
//! * [`dequant`] — tiled decoding via a branch tree or a staged direct
//!   lookup, in f32 or f16, sequential or worker-parallel, all producing
//!   identical bits.
//! * [`storage`] — the NF4K container format with CRC-32 integrity.
//! * [`costmodel`] — analytical traffic/latency/Amdahl arithmetic for the
//!   decode strategies.
//! * [`bench`] — seeded, checksum-verified throughput measurements.

pub mod bench;
pub mod codebook;
pub mod costmodel;
pub mod dequant;
pub mod quantize;
pub mod storage;

pub use codebook::{canonical_nf4, Codebook, CodebookViolation};
pub use dequant::{
    dequantize_blockwise, DecoderKind, DequantError, DequantOutput, ExecConfig, OutputPrecision,
};
pub use quantize::{quantize_blockwise, QuantizeError, QuantizedTensor, BLOCK_SIZE};
pub use storage::{read_container, write_container, StorageError};
