//! NF4 dequantization with two interchangeable nibble decoders and a tiled,
//! worker-parallel execution model.
//!
//! The decoders must agree bit for bit:
//!
//! * [`DecoderKind::Tree`] resolves a nibble through a four-level branch
//!   tree over its bits with the canonical constants as leaves — the shape
//!   of the classic branchy kernel.
//! * [`DecoderKind::DirectLut`] indexes a 16-entry table. Each tile stages
//!   its own copy of the table (64 bytes on the stack), mirroring a kernel
//!   that replicates the LUT into fast local storage so lanes stop queueing
//!   on one shared copy.
//!
//! Execution walks the output in tiles of `tile_elems` elements. Tiles are
//! independent and write disjoint output ranges, so results are identical
//! for any worker count; workers only change who decodes which tile.

use half::f16;
use rayon::prelude::*;
use thiserror::Error;

use crate::codebook::Codebook;
use crate::quantize::{QuantizedTensor, BLOCK_SIZE};

/// Which nibble decoder drives the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    /// Branch tree over the nibble bits, constants at the leaves.
    Tree,
    /// Direct index into a per-tile staged 16-entry table.
    DirectLut,
}

impl DecoderKind {
    /// Stable lowercase name, used in reports and CSV.
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Tree => "tree",
            DecoderKind::DirectLut => "direct_lut",
        }
    }
}

/// Output element type of a dequantization pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputPrecision {
    Float32,
    Float16,
}

/// Geometry and scheduling knobs for a dequantization pass.
///
/// `tile_elems` must equal `lanes * elems_per_lane` and be even, so nibble
/// pairs never straddle a tile boundary. The defaults mirror a 64-lane
/// kernel block decoding 8 elements per lane.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecConfig {
    pub tile_elems: usize,
    pub lanes: usize,
    pub elems_per_lane: usize,
    pub workers: usize,
    pub output_precision: OutputPrecision,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            tile_elems: 512,
            lanes: 64,
            elems_per_lane: 8,
            workers: 1,
            output_precision: OutputPrecision::Float32,
        }
    }
}

impl ExecConfig {
    /// Checks the geometry invariants, reporting the first violation.
    pub fn validate(&self) -> Result<(), DequantError> {
        let fail = |reason: String| Err(DequantError::InvalidConfig { reason });
        if self.lanes == 0 || self.elems_per_lane == 0 {
            return fail("lanes and elems_per_lane must be at least 1".into());
        }
        if self.tile_elems != self.lanes * self.elems_per_lane {
            return fail(format!(
                "tile_elems {} != lanes {} * elems_per_lane {}",
                self.tile_elems, self.lanes, self.elems_per_lane
            ));
        }
        if self.tile_elems % 2 != 0 {
            return fail(format!(
                "tile_elems {} must be even so byte pairs stay within one tile",
                self.tile_elems
            ));
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        Ok(())
    }
}

/// Dequantized output in the requested precision.
#[derive(Debug, Clone, PartialEq)]
pub enum DequantOutput {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

impl DequantOutput {
    /// Element count regardless of precision.
    pub fn len(&self) -> usize {
        match self {
            DequantOutput::F32(v) => v.len(),
            DequantOutput::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Little-endian raw bytes of the output, for hashing or writing out.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            DequantOutput::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            DequantOutput::F16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

/// Dequantization failure modes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DequantError {
    #[error("nibble value {value} out of range 0..=15")]
    NibbleOutOfRange { value: u8 },
    #[error("scale {value} is not a finite non-negative number")]
    InvalidScale { value: f32 },
    #[error("codebook mismatch: tensor encoded with {tensor_id:?}, decoder given {codebook_id:?}")]
    CodebookMismatch { tensor_id: String, codebook_id: String },
    #[error("tree decoder requires the canonical codebook, got {codebook_id:?}")]
    TreeRequiresCanonical { codebook_id: String },
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },
    #[error("invalid tensor: {reason}")]
    InvalidTensor { reason: String },
    #[error("cannot allocate output of {elems} elements")]
    Allocation { elems: usize },
}

/// Tree decode over the nibble bits, canonical constants at the leaves.
/// Bit 3 splits sign, then bits 2..0 walk down to one of 16 values. The
/// constants match `CANONICAL_VALUES` exactly; keeping them literal here
/// preserves the branchy shape this decoder exists to model.
#[inline]
fn tree_decode(q: u8) -> f32 {
    if q & 0b1000 != 0 {
        if q & 0b0100 != 0 {
            if q & 0b0010 != 0 {
                if q & 0b0001 != 0 {
                    1.0
                } else {
                    0.7229568362236023
                }
            } else if q & 0b0001 != 0 {
                0.5626170039176941
            } else {
                0.44070982933044434
            }
        } else if q & 0b0010 != 0 {
            if q & 0b0001 != 0 {
                0.33791524171829224
            } else {
                0.24611230194568634
            }
        } else if q & 0b0001 != 0 {
            0.16093020141124725
        } else {
            0.07958029955625534
        }
    } else if q & 0b0100 != 0 {
        if q & 0b0010 != 0 {
            if q & 0b0001 != 0 {
                0.0
            } else {
                -0.09105003625154495
            }
        } else if q & 0b0001 != 0 {
            -0.18477343022823334
        } else {
            -0.28444138169288635
        }
    } else if q & 0b0010 != 0 {
        if q & 0b0001 != 0 {
            -0.39491748809814453
        } else {
            -0.5250730514526367
        }
    } else if q & 0b0001 != 0 {
        -0.6961928009986877
    } else {
        -1.0
    }
}

/// Decodes one 4-bit index through the branch tree. Only defined for the
/// canonical table, whose constants sit at the leaves.
pub fn decode_nibble_tree(q: u8) -> Result<f32, DequantError> {
    if q > 0x0F {
        return Err(DequantError::NibbleOutOfRange { value: q });
    }
    Ok(tree_decode(q))
}

/// Decodes one 4-bit index by direct table lookup.
pub fn decode_nibble_lut(q: u8, codebook: &Codebook) -> Result<f32, DequantError> {
    if q > 0x0F {
        return Err(DequantError::NibbleOutOfRange { value: q });
    }
    Ok(codebook.values()[q as usize])
}

/// Decodes one packed byte into its two scaled elements: high nibble first,
/// then low. Both decoders produce identical bits; this helper uses the
/// byte's codebook directly.
pub fn dequantize_byte(
    byte: u8,
    scale: f32,
    codebook: &Codebook,
) -> Result<(f32, f32), DequantError> {
    if !scale.is_finite() || scale < 0.0 || scale.is_sign_negative() {
        return Err(DequantError::InvalidScale { value: scale });
    }
    let values = codebook.values();
    Ok((
        values[(byte >> 4) as usize] * scale,
        values[(byte & 0x0F) as usize] * scale,
    ))
}

/// Output element: anything an `f32` product converts into. The conversion
/// for `f16` rounds to nearest-even.
trait Sample: Copy + Send {
    fn from_f32(x: f32) -> Self;
}

impl Sample for f32 {
    #[inline(always)]
    fn from_f32(x: f32) -> f32 {
        x
    }
}

impl Sample for f16 {
    #[inline(always)]
    fn from_f32(x: f32) -> f16 {
        f16::from_f32(x)
    }
}

/// Decodes the elements `[start, start + out.len())` into `out`, reading
/// packed bytes and per-block scales from the tensor. `start` must be even,
/// so every byte's high nibble lands first. `decode` maps a nibble in
/// `0..=15` to its code value.
#[inline]
fn decode_tile<T: Sample, F: Fn(u8) -> f32>(
    out: &mut [T],
    start: usize,
    packed: &[u8],
    absmax: &[f32],
    decode: &F,
) {
    debug_assert_eq!(start % 2, 0);
    let end = start + out.len();
    let mut k = start;
    while k < end {
        // Run to the nearer of: end of this scale block, end of the tile.
        let block = k / BLOCK_SIZE;
        let run_end = end.min((block + 1) * BLOCK_SIZE);
        let scale = absmax[block];
        let mut i = k;
        while i + 2 <= run_end {
            let byte = packed[i / 2];
            out[i - start] = T::from_f32(decode(byte >> 4) * scale);
            out[i + 1 - start] = T::from_f32(decode(byte & 0x0F) * scale);
            i += 2;
        }
        if i < run_end {
            // Odd tail: the final element is a high nibble; the pad low
            // nibble stays unread.
            out[i - start] = T::from_f32(decode(packed[i / 2] >> 4) * scale);
        }
        k = run_end;
    }
}

/// Decodes one tile with the requested decoder. The LUT path stages a fresh
/// 64-byte copy of the table per tile; the tree path needs no table at all.
#[inline]
fn decode_tile_with<T: Sample>(
    out: &mut [T],
    start: usize,
    packed: &[u8],
    absmax: &[f32],
    decoder: DecoderKind,
    codebook: &Codebook,
) {
    match decoder {
        DecoderKind::Tree => decode_tile(out, start, packed, absmax, &tree_decode),
        DecoderKind::DirectLut => {
            let staged: [f32; 16] = *codebook.values();
            decode_tile(out, start, packed, absmax, &|q| staged[q as usize]);
        }
    }
}

fn run_tiles<T: Sample + Sync>(
    out: &mut [T],
    qt: &QuantizedTensor,
    decoder: DecoderKind,
    config: &ExecConfig,
    codebook: &Codebook,
) -> Result<(), DequantError> {
    let tile = config.tile_elems;
    let packed = qt.packed();
    let absmax = qt.absmax();
    if config.workers == 1 {
        for (t, chunk) in out.chunks_mut(tile).enumerate() {
            decode_tile_with(chunk, t * tile, packed, absmax, decoder, codebook);
        }
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| DequantError::InvalidConfig {
            reason: format!("cannot build worker pool: {e}"),
        })?;
    pool.install(|| {
        out.par_chunks_mut(tile).enumerate().for_each(|(t, chunk)| {
            decode_tile_with(chunk, t * tile, packed, absmax, decoder, codebook);
        });
    });
    Ok(())
}

fn alloc_output<T: Sample>(n: usize) -> Result<Vec<T>, DequantError> {
    let mut out: Vec<T> = Vec::new();
    out.try_reserve_exact(n)
        .map_err(|_| DequantError::Allocation { elems: n })?;
    out.resize(n, T::from_f32(0.0));
    Ok(out)
}

/// Dequantizes a whole tensor under the given execution config.
///
/// The output is bit-identical for every `workers` value and for both
/// decoders: tiles own disjoint output ranges, every element's scale comes
/// from its global block index, and each element is one table value times
/// its block scale (converted once to `f16` when requested). The tree
/// decoder is only defined for the canonical table and is rejected for any
/// other codebook.
pub fn dequantize_blockwise(
    qt: &QuantizedTensor,
    decoder: DecoderKind,
    config: &ExecConfig,
    codebook: &Codebook,
) -> Result<DequantOutput, DequantError> {
    qt.validate().map_err(|e| DequantError::InvalidTensor {
        reason: e.to_string(),
    })?;
    config.validate()?;
    if qt.codebook_id() != codebook.id() {
        return Err(DequantError::CodebookMismatch {
            tensor_id: qt.codebook_id().to_string(),
            codebook_id: codebook.id().to_string(),
        });
    }
    if decoder == DecoderKind::Tree && !codebook.is_canonical() {
        return Err(DequantError::TreeRequiresCanonical {
            codebook_id: codebook.id().to_string(),
        });
    }
    match config.output_precision {
        OutputPrecision::Float32 => {
            let mut out = alloc_output::<f32>(qt.n())?;
            run_tiles(&mut out, qt, decoder, config, codebook)?;
            Ok(DequantOutput::F32(out))
        }
        OutputPrecision::Float16 => {
            let mut out = alloc_output::<f16>(qt.n())?;
            run_tiles(&mut out, qt, decoder, config, codebook)?;
            Ok(DequantOutput::F16(out))
        }
    }
}
