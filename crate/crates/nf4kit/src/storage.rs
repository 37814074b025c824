//! The NF4K single-tensor container: a small little-endian header, the
//! per-block scales, the packed nibbles, and a trailing CRC-32.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NF4K"
//! 4       2     format version (currently 1)
//! 6       2     flags (bit 0: element count is odd, so the final low
//!               nibble is padding; all other bits reserved, must be 0)
//! 8       8     n, element count (u64)
//! 16      4     block size (u32, currently always 64)
//! 20      1     codebook id length in bytes
//! 21      ..    codebook id (UTF-8)
//! ..      4*B   absmax scales, f32 LE, B = ceil(n / block_size)
//! ..      ..    packed nibbles, ceil(n / 2) bytes
//! end-4   4     CRC-32 (IEEE) over every preceding byte
//! ```
//!
//! Readers never trust a field before the class of error it can produce is
//! pinned down: a wrong magic is "not an NF4K file", an unknown version is
//! "unsupported", missing bytes are "truncated", and everything else that
//! contradicts the format (checksum included) is "corrupt".

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::quantize::{QuantizedTensor, QuantizeError};

/// File signature, first four bytes of every container.
pub const MAGIC: [u8; 4] = *b"NF4K";

/// Format revision written by this library.
pub const FORMAT_VERSION: u16 = 1;

/// Flag bit 0: `n` is odd and the final low nibble is zero padding.
pub const FLAG_ODD_COUNT: u16 = 0x0001;

/// Container read/write failure modes.
#[derive(Debug, Error)]
pub enum StorageError {
    #[error("not an NF4K file")]
    NotAnNf4File,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated")]
    Truncated,
    #[error("corrupt: {0}")]
    Corrupt(String),
    #[error("codebook id is {0} bytes, the format caps it at 255")]
    IdTooLong(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Exact byte size of a container for a tensor of `n` elements and the
/// given codebook id length.
pub fn container_size(n: u64, codebook_id_len: usize) -> u64 {
    let header = 21 + codebook_id_len as u64;
    let absmax = 4 * n.div_ceil(64);
    let packed = n.div_ceil(2);
    header + absmax + packed + 4
}

/// Writes `qt` as a container, returning the bytes written.
pub fn write_container<W: Write>(qt: &QuantizedTensor, sink: &mut W) -> Result<u64, StorageError> {
    qt.validate()
        .map_err(|e| StorageError::Corrupt(e.to_string()))?;
    let id = qt.codebook_id().as_bytes();
    if id.len() > u8::MAX as usize {
        return Err(StorageError::IdTooLong(id.len()));
    }

    let mut header = Vec::with_capacity(21 + id.len());
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let flags = if qt.n() % 2 == 1 { FLAG_ODD_COUNT } else { 0 };
    header.extend_from_slice(&flags.to_le_bytes());
    header.extend_from_slice(&(qt.n() as u64).to_le_bytes());
    header.extend_from_slice(&qt.block_size().to_le_bytes());
    header.push(id.len() as u8);
    header.extend_from_slice(id);

    let mut absmax_bytes = Vec::with_capacity(4 * qt.absmax().len());
    for a in qt.absmax() {
        absmax_bytes.extend_from_slice(&a.to_le_bytes());
    }

    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&header);
    hasher.update(&absmax_bytes);
    hasher.update(qt.packed());
    let crc = hasher.finalize();

    sink.write_all(&header)?;
    sink.write_all(&absmax_bytes)?;
    sink.write_all(qt.packed())?;
    sink.write_all(&crc.to_le_bytes())?;

    Ok(header.len() as u64 + absmax_bytes.len() as u64 + qt.packed().len() as u64 + 4)
}

/// Reads exactly `buf.len()` bytes, mapping a clean EOF to `Truncated`.
fn read_exact_or_truncated<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<(), StorageError> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            StorageError::Truncated
        } else {
            StorageError::Io(e)
        }
    })
}

/// Reads `len` bytes without trusting `len` for the allocation: the reader
/// is capped, so a header promising more data than the file holds reports
/// `Truncated` instead of attempting a giant buffer.
fn read_len_prefixed<R: Read>(source: &mut R, len: u64) -> Result<Vec<u8>, StorageError> {
    let mut buf = Vec::new();
    source.take(len).read_to_end(&mut buf)?;
    if (buf.len() as u64) < len {
        return Err(StorageError::Truncated);
    }
    Ok(buf)
}

/// Reads one container and rebuilds the quantized tensor, verifying the
/// magic, version, flags, structural invariants, and CRC-32.
pub fn read_container<R: Read>(source: &mut R) -> Result<QuantizedTensor, StorageError> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(source, &mut magic)?;
    if magic != MAGIC {
        return Err(StorageError::NotAnNf4File);
    }

    let mut fixed = [0u8; 17];
    read_exact_or_truncated(source, &mut fixed)?;
    let version = u16::from_le_bytes([fixed[0], fixed[1]]);
    if version != FORMAT_VERSION {
        return Err(StorageError::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes([fixed[2], fixed[3]]);
    let n = u64::from_le_bytes(fixed[4..12].try_into().expect("8 bytes"));
    let block_size = u32::from_le_bytes(fixed[12..16].try_into().expect("4 bytes"));
    let id_len = fixed[16] as usize;

    if flags & !FLAG_ODD_COUNT != 0 {
        return Err(StorageError::Corrupt(format!(
            "reserved flag bits set: {flags:#06x}"
        )));
    }
    let odd = flags & FLAG_ODD_COUNT != 0;
    if odd != (n % 2 == 1) {
        return Err(StorageError::Corrupt(format!(
            "odd-count flag {} disagrees with element count {n}",
            odd as u8
        )));
    }
    if block_size != 64 {
        return Err(StorageError::Corrupt(format!(
            "unsupported block size {block_size}"
        )));
    }
    let n_usize = usize::try_from(n)
        .map_err(|_| StorageError::Corrupt(format!("element count {n} exceeds address space")))?;

    let id_bytes = read_len_prefixed(source, id_len as u64)?;
    let codebook_id = String::from_utf8(id_bytes.clone())
        .map_err(|_| StorageError::Corrupt("codebook id is not UTF-8".into()))?;

    let absmax_bytes = read_len_prefixed(source, 4 * n.div_ceil(64))?;
    let packed = read_len_prefixed(source, n.div_ceil(2))?;

    let mut crc_bytes = [0u8; 4];
    read_exact_or_truncated(source, &mut crc_bytes)?;
    let stored_crc = u32::from_le_bytes(crc_bytes);

    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&MAGIC);
    hasher.update(&fixed);
    hasher.update(&id_bytes);
    hasher.update(&absmax_bytes);
    hasher.update(&packed);
    let actual_crc = hasher.finalize();
    if actual_crc != stored_crc {
        return Err(StorageError::Corrupt(format!(
            "crc mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }

    let absmax: Vec<f32> = absmax_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    QuantizedTensor::from_parts(packed, absmax, n_usize, block_size, codebook_id).map_err(
        |e| match e {
            QuantizeError::InvalidTensor { reason } => StorageError::Corrupt(reason),
            other => StorageError::Corrupt(other.to_string()),
        },
    )
}
