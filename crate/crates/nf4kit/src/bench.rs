//! Repeatable decoder benchmarks: pinned input generation, a fixed
//! warmup/measure protocol, checksum-verified outputs, and CSV reporting.
//!
//! Protocol: the input tensor is generated from a seeded generator
//! (splitmix64 feeding a Box-Muller transform, so every platform draws the
//! same standard normals), quantized once outside the timed region, then
//! dequantized `warmup_passes` times untimed and `measured_passes` times
//! timed. Only the dequantize call sits inside the timer. Every pass's
//! output is checksummed and all checksums must agree, which catches a
//! decoder that goes fast by going wrong.

use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::codebook::canonical_nf4;
use crate::dequant::{
    dequantize_blockwise, DecoderKind, DequantError, DequantOutput, ExecConfig,
};
use crate::quantize::{quantize_blockwise, QuantizeError, QuantizedTensor};

/// Deterministic standard-normal generator: splitmix64 for bits, Box-Muller
/// for the transform. The same seed yields the same sequence everywhere;
/// the only platform dependence is the last-ulp behavior of `ln`/`cos`/`sin`
/// in the host libm.
#[derive(Debug, Clone)]
pub struct NormalSource {
    state: u64,
    spare: Option<f32>,
}

impl NormalSource {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            spare: None,
        }
    }

    /// Next raw 64-bit draw (splitmix64).
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Next standard-normal sample. Box-Muller produces pairs; the second
    /// of each pair is handed out on the following call.
    pub fn next_normal(&mut self) -> f32 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln finite; u2 in [0, 1). 53-bit mantissas.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * 2.0f64.powi(-53);
        let u2 = (self.next_u64() >> 11) as f64 * 2.0f64.powi(-53);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some((r * theta.sin()) as f32);
        (r * theta.cos()) as f32
    }

    pub fn fill(&mut self, out: &mut [f32]) {
        for slot in out {
            *slot = self.next_normal();
        }
    }
}

/// `n` standard normals from the given seed, or an error if the buffer
/// cannot be allocated.
pub fn standard_normal_tensor(n: usize, seed: u64) -> Result<Vec<f32>, BenchError> {
    let mut values: Vec<f32> = Vec::new();
    values
        .try_reserve_exact(n)
        .map_err(|_| BenchError::Allocation { elems: n })?;
    values.resize(n, 0.0);
    NormalSource::new(seed).fill(&mut values);
    Ok(values)
}

/// One benchmark configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchSpec {
    pub n_elements: usize,
    pub decoder: DecoderKind,
    pub workers: usize,
    pub warmup_passes: usize,
    pub measured_passes: usize,
    pub seed: u64,
}

impl BenchSpec {
    /// Standard protocol: one untimed warmup pass, three measured passes.
    pub fn new(n_elements: usize, decoder: DecoderKind, workers: usize, seed: u64) -> Self {
        Self {
            n_elements,
            decoder,
            workers,
            warmup_passes: 1,
            measured_passes: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |reason: &str| Err(BenchError::InvalidSpec(reason.into()));
        if self.n_elements == 0 {
            return fail("n_elements must be at least 1");
        }
        if self.measured_passes == 0 {
            return fail("measured_passes must be at least 1");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        Ok(())
    }
}

/// Results of one benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub spec: BenchSpec,
    /// Wall time of each measured pass, in order.
    pub pass_seconds: Vec<f64>,
    /// Arithmetic mean of `pass_seconds`.
    pub mean_seconds: f64,
    /// Elements decoded per second at the mean.
    pub elements_per_second: f64,
    /// Compressed bytes read per second at the mean (packed + scales).
    pub input_bytes_per_second: f64,
    /// Compressed input size in bytes.
    pub input_bytes: u64,
    /// CRC-32 of the output's little-endian bytes; identical across passes.
    pub checksum: u32,
}

/// Tree-versus-LUT comparison at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderComparison {
    pub tree: BenchReport,
    pub direct_lut: BenchReport,
    /// `tree mean / direct_lut mean`: how many times faster the staged
    /// lookup decode is than the branch tree.
    pub speedup_ratio: f64,
}

/// Benchmark failure modes.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench spec: {0}")]
    InvalidSpec(String),
    #[error("cannot allocate {elems} elements")]
    Allocation { elems: usize },
    #[error("output checksum changed on pass {pass}: {got:#010x} != {want:#010x}")]
    ChecksumMismatch { pass: usize, got: u32, want: u32 },
    #[error("decoder outputs disagree: tree {tree:#010x}, direct_lut {lut:#010x}")]
    DecoderDisagreement { tree: u32, lut: u32 },
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Dequant(#[from] DequantError),
}

/// CRC-32 of an output buffer's little-endian byte image.
pub fn output_checksum(output: &DequantOutput) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    match output {
        DequantOutput::F32(v) => {
            for x in v {
                hasher.update(&x.to_le_bytes());
            }
        }
        DequantOutput::F16(v) => {
            for x in v {
                hasher.update(&x.to_le_bytes());
            }
        }
    }
    hasher.finalize()
}

/// Runs one benchmark: generate, quantize, warm up, measure.
///
/// Input generation and quantization happen before any timing. Allocation
/// failures surface as errors before the first timed pass.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let values = standard_normal_tensor(spec.n_elements, spec.seed)?;
    let codebook = canonical_nf4();
    let qt = quantize_blockwise(&values, codebook)?;
    drop(values);

    let config = ExecConfig {
        workers: spec.workers,
        ..Default::default()
    };
    let mut expected: Option<u32> = None;
    let mut check = |output: &DequantOutput, pass: usize| -> Result<u32, BenchError> {
        let got = output_checksum(output);
        match expected {
            None => {
                expected = Some(got);
                Ok(got)
            }
            Some(want) if want == got => Ok(got),
            Some(want) => Err(BenchError::ChecksumMismatch { pass, got, want }),
        }
    };

    for pass in 0..spec.warmup_passes {
        let output = dequantize_blockwise(&qt, spec.decoder, &config, codebook)?;
        check(&output, pass)?;
    }

    let mut pass_seconds = Vec::with_capacity(spec.measured_passes);
    let mut checksum = 0u32;
    for pass in 0..spec.measured_passes {
        let start = Instant::now();
        let output = dequantize_blockwise(&qt, spec.decoder, &config, codebook)?;
        pass_seconds.push(start.elapsed().as_secs_f64());
        checksum = check(&output, spec.warmup_passes + pass)?;
    }

    let mean_seconds = pass_seconds.iter().sum::<f64>() / pass_seconds.len() as f64;
    let input_bytes = (qt.packed().len() + 4 * qt.absmax().len()) as u64;
    Ok(BenchReport {
        spec: spec.clone(),
        pass_seconds,
        mean_seconds,
        elements_per_second: spec.n_elements as f64 / mean_seconds,
        input_bytes_per_second: input_bytes as f64 / mean_seconds,
        input_bytes,
        checksum,
    })
}

/// Benchmarks both decoders on the same input and protocol, verifying they
/// produce identical output, and reports the tree/LUT speedup ratio.
pub fn compare_decoders(
    n_elements: usize,
    workers: usize,
    seed: u64,
    warmup_passes: usize,
    measured_passes: usize,
) -> Result<DecoderComparison, BenchError> {
    let mut spec = BenchSpec::new(n_elements, DecoderKind::Tree, workers, seed);
    spec.warmup_passes = warmup_passes;
    spec.measured_passes = measured_passes;
    let tree = run_bench(&spec)?;
    spec.decoder = DecoderKind::DirectLut;
    let direct_lut = run_bench(&spec)?;
    if tree.checksum != direct_lut.checksum {
        return Err(BenchError::DecoderDisagreement {
            tree: tree.checksum,
            lut: direct_lut.checksum,
        });
    }
    let speedup_ratio = tree.mean_seconds / direct_lut.mean_seconds;
    Ok(DecoderComparison {
        tree,
        direct_lut,
        speedup_ratio,
    })
}

/// Column header of the benchmark CSV schema.
pub fn csv_header() -> &'static str {
    "decoder,n_elements,workers,warmup_passes,measured_passes,seed,\
     mean_seconds,elements_per_second,input_bytes_per_second,checksum,pass_seconds"
}

/// One CSV row per report. `pass_seconds` is space-separated inside the
/// final column; floats keep full precision (shortest round-trip form).
pub fn csv_row(report: &BenchReport) -> String {
    let passes = report
        .pass_seconds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "{},{},{},{},{},{},{},{},{},{:#010x},{}",
        report.spec.decoder.name(),
        report.spec.n_elements,
        report.spec.workers,
        report.spec.warmup_passes,
        report.spec.measured_passes,
        report.spec.seed,
        report.mean_seconds,
        report.elements_per_second,
        report.input_bytes_per_second,
        report.checksum,
        passes,
    )
}

/// Renders a self-contained SVG bar chart of decode throughput, one bar per
/// report. No dependencies; suitable for dropping next to the CSV.
pub fn render_svg(reports: &[BenchReport]) -> String {
    const BAR_H: usize = 22;
    const GAP: usize = 8;
    const LEFT: usize = 210;
    const WIDTH: usize = 760;
    const TOP: usize = 40;

    let max_eps = reports
        .iter()
        .map(|r| r.elements_per_second)
        .fold(f64::MIN_POSITIVE, f64::max);
    let height = TOP + reports.len().max(1) * (BAR_H + GAP) + 20;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="monospace" font-size="12">"#
    );
    let _ = write!(
        svg,
        r#"<text x="10" y="20" font-size="14">dequantize throughput (elements/s)</text>"#
    );
    for (i, r) in reports.iter().enumerate() {
        let y = TOP + i * (BAR_H + GAP);
        let w = ((r.elements_per_second / max_eps) * (WIDTH - LEFT - 120) as f64).round() as usize;
        let label = format!(
            "{} n={} w={}",
            r.spec.decoder.name(),
            r.spec.n_elements,
            r.spec.workers
        );
        let fill = match r.spec.decoder {
            DecoderKind::Tree => "#b15928",
            DecoderKind::DirectLut => "#1f78b4",
        };
        let _ = write!(
            svg,
            r#"<text x="10" y="{}">{label}</text>"#,
            y + BAR_H - 6
        );
        let _ = write!(
            svg,
            r#"<rect x="{LEFT}" y="{y}" width="{w}" height="{BAR_H}" fill="{fill}"/>"#
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}">{:.3e}</text>"#,
            LEFT + w + 6,
            y + BAR_H - 6,
            r.elements_per_second
        );
    }
    svg.push_str("</svg>");
    svg
}

/// Quantizes a seeded standard-normal tensor; shared setup for external
/// benchmark harnesses.
pub fn quantized_normal_tensor(n: usize, seed: u64) -> Result<QuantizedTensor, BenchError> {
    let values = standard_normal_tensor(n, seed)?;
    Ok(quantize_blockwise(&values, canonical_nf4())?)
}
