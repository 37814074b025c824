//! The canonical 16-entry NF4 code table and its validity checks.
//!
//! NF4 represents weights with 16 levels placed at quantiles of a standard
//! normal distribution, rescaled to `[-1, 1]` with an exact zero level. The
//! constants below are the de-facto standard table from the QLoRA /
//! bitsandbytes reference implementation, stored at 32-bit float precision
//! (16 x 4 = 64 bytes). They are embedded rather than re-derived at runtime
//! so that encodings stay bit-compatible with that ecosystem.

use std::sync::OnceLock;

use thiserror::Error;

/// Number of code levels in a 4-bit table.
pub const CODE_COUNT: usize = 16;

/// Identity tag of the canonical table, recorded in containers.
pub const CANONICAL_ID: &str = "nf4-v1";

/// The canonical NF4 levels, sorted ascending. Every decimal literal below
/// is exactly representable as an `f32`; index 7 is the exact zero level.
pub const CANONICAL_VALUES: [f32; CODE_COUNT] = [
    -1.0,
    -0.6961928009986877,
    -0.5250730514526367,
    -0.39491748809814453,
    -0.28444138169288635,
    -0.18477343022823334,
    -0.09105003625154495,
    0.0,
    0.07958029955625534,
    0.16093020141124725,
    0.24611230194568634,
    0.33791524171829224,
    0.44070982933044434,
    0.5626170039176941,
    0.7229568362236023,
    1.0,
];

/// A violated codebook invariant. `validate_table` reports the first one.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodebookViolation {
    #[error("wrong length: expected {CODE_COUNT} entries, got {got}")]
    WrongLength { got: usize },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("not strictly increasing at index {index}")]
    NotStrictlyIncreasing { index: usize },
    #[error("values[0] must be -1.0 exactly, got {got}")]
    LowerEndpoint { got: f32 },
    #[error("values[15] must be 1.0 exactly, got {got}")]
    UpperEndpoint { got: f32 },
    #[error("values[7] must be 0.0 exactly, got {got}")]
    MissingZero { got: f32 },
}

/// Checks a candidate table against every codebook invariant, returning the
/// first violation found.
pub fn validate_table(values: &[f32]) -> Result<(), CodebookViolation> {
    if values.len() != CODE_COUNT {
        return Err(CodebookViolation::WrongLength { got: values.len() });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(CodebookViolation::NonFinite { index });
    }
    for index in 1..CODE_COUNT {
        if values[index] <= values[index - 1] {
            return Err(CodebookViolation::NotStrictlyIncreasing { index });
        }
    }
    if values[0] != -1.0 {
        return Err(CodebookViolation::LowerEndpoint { got: values[0] });
    }
    if values[CODE_COUNT - 1] != 1.0 {
        return Err(CodebookViolation::UpperEndpoint {
            got: values[CODE_COUNT - 1],
        });
    }
    if values[7] != 0.0 {
        return Err(CodebookViolation::MissingZero { got: values[7] });
    }
    Ok(())
}

/// A 16-entry NF4 code table plus its identity tag.
///
/// Immutable after construction and safe to share across any number of
/// workers. Construction goes through [`Codebook::new`] (or
/// [`canonical_nf4`]), so a `Codebook` in hand always satisfies the
/// invariants checked by [`validate_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    values: [f32; CODE_COUNT],
    id: String,
}

impl Codebook {
    /// Builds a codebook from a candidate table, rejecting invalid ones.
    pub fn new(values: &[f32], id: impl Into<String>) -> Result<Self, CodebookViolation> {
        validate_table(values)?;
        let mut table = [0.0f32; CODE_COUNT];
        table.copy_from_slice(values);
        Ok(Self {
            values: table,
            id: id.into(),
        })
    }

    /// The 16 code values, sorted ascending.
    pub fn values(&self) -> &[f32; CODE_COUNT] {
        &self.values
    }

    /// Identity tag, e.g. `"nf4-v1"` for the canonical table.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Re-checks the invariants on this table.
    pub fn validate(&self) -> Result<(), CodebookViolation> {
        validate_table(&self.values)
    }

    /// True when both the id and every code value match the canonical table
    /// bit for bit.
    pub fn is_canonical(&self) -> bool {
        self.id == CANONICAL_ID
            && self
                .values
                .iter()
                .zip(CANONICAL_VALUES.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest gap between adjacent code values.
    ///
    /// Half of it bounds the per-element roundtrip error of blockwise
    /// quantization (scaled by the block absmax). For the canonical table
    /// the widest interval is the bottom one, `values[1] - values[0]`
    /// (~0.3038): the negative side spans `[-1, 0]` with only seven
    /// intervals, so its codes sit farther apart than the eight-interval
    /// positive side, whose widest (`values[15] - values[14]`, ~0.2770)
    /// comes second.
    pub fn max_adjacent_gap(&self) -> f32 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0f32, f32::max)
    }

    /// Half the largest adjacent gap, the normalized roundtrip error bound.
    pub fn half_max_gap(&self) -> f32 {
        self.max_adjacent_gap() / 2.0
    }
}

/// Returns the canonical NF4 codebook. Always the same object; the table is
/// a program constant.
pub fn canonical_nf4() -> &'static Codebook {
    static CANONICAL: OnceLock<Codebook> = OnceLock::new();
    CANONICAL.get_or_init(|| {
        Codebook::new(&CANONICAL_VALUES, CANONICAL_ID).expect("canonical table is valid")
    })
}
