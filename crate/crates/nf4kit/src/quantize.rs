//! Blockwise NF4 quantization: absmax scaling, nearest-code search, and
//! nibble packing.
//!
//! Tensors are split into blocks of 64 elements. Each block is normalized by
//! its absolute maximum into `[-1, 1]`, every element is mapped to the
//! nearest of the 16 code values, and pairs of 4-bit indices are packed into
//! bytes with the even-position element in the high nibble. One `f32` scale
//! per block rides along with the packed payload.

use thiserror::Error;

use crate::codebook::{Codebook, CODE_COUNT};

/// Elements covered by one absmax scale.
pub const BLOCK_SIZE: usize = 64;

/// Quantization failure modes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizeError {
    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },
    #[error("nibble value {value} at position {index} out of range 0..=15")]
    IndexOutOfRange { index: usize, value: u8 },
    #[error("packed length {got} does not cover {n} elements")]
    PackedTooShort { n: usize, got: usize },
    #[error("invalid tensor: {reason}")]
    InvalidTensor { reason: String },
}

/// A quantized tensor: packed 4-bit codes plus per-block scales.
///
/// Constructed by [`quantize_blockwise`] or checked field-by-field via
/// [`QuantizedTensor::from_parts`], so the structural invariants (packed
/// length, scale count, zero pad nibble for odd lengths, finite non-negative
/// scales) always hold for a value of this type.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    packed: Vec<u8>,
    absmax: Vec<f32>,
    n: usize,
    block_size: u32,
    codebook_id: String,
}

impl QuantizedTensor {
    /// Reassembles a tensor from raw parts, enforcing every invariant.
    pub fn from_parts(
        packed: Vec<u8>,
        absmax: Vec<f32>,
        n: usize,
        block_size: u32,
        codebook_id: impl Into<String>,
    ) -> Result<Self, QuantizeError> {
        let tensor = Self {
            packed,
            absmax,
            n,
            block_size,
            codebook_id: codebook_id.into(),
        };
        tensor.validate()?;
        Ok(tensor)
    }

    /// Packed nibble payload, `ceil(n / 2)` bytes.
    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    /// Per-block scales, `ceil(n / block_size)` entries.
    pub fn absmax(&self) -> &[f32] {
        &self.absmax
    }

    /// Element count of the original tensor.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Elements per scale; fixed at 64 in this format revision.
    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    /// Identity tag of the codebook the indices refer to.
    pub fn codebook_id(&self) -> &str {
        &self.codebook_id
    }

    /// Checks the structural invariants, reporting the first violation.
    pub fn validate(&self) -> Result<(), QuantizeError> {
        let fail = |reason: String| Err(QuantizeError::InvalidTensor { reason });
        if self.block_size as usize != BLOCK_SIZE {
            return fail(format!(
                "unsupported block size {} (expected {BLOCK_SIZE})",
                self.block_size
            ));
        }
        let want_packed = self.n.div_ceil(2);
        if self.packed.len() != want_packed {
            return fail(format!(
                "packed length {} does not match ceil({} / 2) = {want_packed}",
                self.packed.len(),
                self.n
            ));
        }
        let want_blocks = self.n.div_ceil(BLOCK_SIZE);
        if self.absmax.len() != want_blocks {
            return fail(format!(
                "absmax length {} does not match ceil({} / {BLOCK_SIZE}) = {want_blocks}",
                self.absmax.len(),
                self.n
            ));
        }
        if let Some(i) = self
            .absmax
            .iter()
            .position(|a| !a.is_finite() || *a < 0.0 || a.is_sign_negative())
        {
            return fail(format!(
                "absmax[{i}] = {} is not a finite non-negative scale",
                self.absmax[i]
            ));
        }
        if self.n % 2 == 1 {
            let last = self.packed[self.packed.len() - 1];
            if last & 0x0F != 0 {
                return fail(format!(
                    "odd element count requires a zero pad nibble, found {:#x}",
                    last & 0x0F
                ));
            }
        }
        Ok(())
    }
}

/// Nearest code without the finiteness check; callers guarantee `x` is a
/// finite normalized value. Strict `<` keeps ties on the smaller index.
#[inline]
fn nearest_unchecked(x: f32, values: &[f32; CODE_COUNT]) -> u8 {
    let mut best = 0usize;
    let mut best_dist = (x - values[0]).abs();
    for (i, &v) in values.iter().enumerate().skip(1) {
        let dist = (x - v).abs();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best as u8
}

/// Index of the code value nearest to `x_norm`, with ties resolved toward
/// the smaller index. `x_norm` is expected in `[-1, 1]` but any finite value
/// clamps naturally to an endpoint by distance.
pub fn nearest_code_index(x_norm: f32, codebook: &Codebook) -> Result<u8, QuantizeError> {
    if !x_norm.is_finite() {
        return Err(QuantizeError::NonFinite { index: 0 });
    }
    Ok(nearest_unchecked(x_norm, codebook.values()))
}

/// Packs 4-bit indices two per byte, even positions in the high nibble. An
/// odd count leaves the final low nibble zero.
pub fn pack_nibbles(indices: &[u8]) -> Result<Vec<u8>, QuantizeError> {
    if let Some(index) = indices.iter().position(|&v| v > 0x0F) {
        return Err(QuantizeError::IndexOutOfRange {
            index,
            value: indices[index],
        });
    }
    let mut packed = Vec::with_capacity(indices.len().div_ceil(2));
    let mut pairs = indices.chunks_exact(2);
    for pair in &mut pairs {
        packed.push((pair[0] << 4) | pair[1]);
    }
    if let [last] = pairs.remainder() {
        packed.push(last << 4);
    }
    Ok(packed)
}

/// Recovers the first `n` 4-bit indices from a packed payload.
pub fn unpack_nibbles(packed: &[u8], n: usize) -> Result<Vec<u8>, QuantizeError> {
    if packed.len() < n.div_ceil(2) {
        return Err(QuantizeError::PackedTooShort {
            n,
            got: packed.len(),
        });
    }
    let mut indices = Vec::with_capacity(n);
    for k in 0..n {
        let byte = packed[k / 2];
        indices.push(if k % 2 == 0 { byte >> 4 } else { byte & 0x0F });
    }
    Ok(indices)
}

/// Quantizes a tensor blockwise against `codebook`.
///
/// Rejects non-finite input up front. An all-zero block stores scale 0 and
/// maps every element to the zero code (index 7), so it reconstructs to
/// exact zeros.
pub fn quantize_blockwise(
    values: &[f32],
    codebook: &Codebook,
) -> Result<QuantizedTensor, QuantizeError> {
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(QuantizeError::NonFinite { index });
    }
    let n = values.len();
    let table = codebook.values();
    let mut packed = Vec::with_capacity(n.div_ceil(2));
    let mut absmax = Vec::with_capacity(n.div_ceil(BLOCK_SIZE));
    let mut indices = [0u8; BLOCK_SIZE];

    // BLOCK_SIZE is even, so nibble pairs never straddle a block boundary
    // and each block can be packed independently.
    for block in values.chunks(BLOCK_SIZE) {
        let scale = block.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        absmax.push(scale);
        let idx = &mut indices[..block.len()];
        if scale == 0.0 {
            idx.fill(7);
        } else {
            for (slot, &v) in idx.iter_mut().zip(block) {
                *slot = nearest_unchecked(v / scale, table);
            }
        }
        let mut pairs = idx.chunks_exact(2);
        for pair in &mut pairs {
            packed.push((pair[0] << 4) | pair[1]);
        }
        if let [last] = pairs.remainder() {
            packed.push(last << 4);
        }
    }

    Ok(QuantizedTensor {
        packed,
        absmax,
        n,
        block_size: BLOCK_SIZE as u32,
        codebook_id: codebook.id().to_string(),
    })
}
