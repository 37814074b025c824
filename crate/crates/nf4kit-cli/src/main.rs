//! `nf4kit` — quantize raw f32 tensors into NF4K containers, decode them
//! back, verify container integrity, benchmark the decoders, and print the
//! kernel cost model.
//!
//! Conventions: data goes to stdout (or the output path), diagnostics go to
//! stderr. `-` means stdin/stdout for tensor input/output. Exit codes:
//! 0 success, 1 usage error, 2 data error (bad file, failed invariant).

use std::error::Error;
use std::fs::{self, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nf4kit::bench::{self, BenchReport, BenchSpec};
use nf4kit::costmodel::{
    amdahl_projection, instruction_reduction, latency_advantage, lut_traffic, CycleCosts,
    InstrCounts, KernelGeometry,
};
use nf4kit::storage::read_container;
use nf4kit::{
    canonical_nf4, dequantize_blockwise, quantize_blockwise, write_container, DecoderKind,
    ExecConfig, OutputPrecision,
};

#[derive(Parser)]
#[command(name = "nf4kit", version, about = "NF4 4-bit tensor quantization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize raw little-endian f32 values into an NF4K container.
    Quantize {
        /// Raw f32 input file, or `-` for stdin.
        input: PathBuf,
        /// Container output file, or `-` for stdout.
        output: PathBuf,
        /// Element count; default infers it from the input size.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Decode an NF4K container back to raw little-endian floats.
    Dequantize {
        /// Container input file, or `-` for stdin.
        input: PathBuf,
        /// Raw float output file, or `-` for stdout.
        output: PathBuf,
        /// Which nibble decoder to run.
        #[arg(long, value_enum, default_value_t = DecoderArg::DirectLut)]
        decoder: DecoderArg,
        /// Worker threads decoding tiles.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Elements per tile (even; multiples of 8 decode 8 per lane).
        #[arg(long, default_value_t = 512)]
        tile: usize,
        /// Emit f16 instead of f32.
        #[arg(long)]
        f16: bool,
    },
    /// Check a container's header, checksum, and decoder equivalence.
    Verify {
        /// Container input file, or `-` for stdin.
        input: PathBuf,
    },
    /// Benchmark the decoders on a seeded random tensor.
    Bench {
        /// Tensor size in elements.
        #[arg(long)]
        n: usize,
        /// Decoder to measure, or `both` to compare.
        #[arg(long, value_enum, default_value_t = BenchDecoderArg::Both)]
        decoder: BenchDecoderArg,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Measured passes per decoder.
        #[arg(long, default_value_t = 3)]
        passes: usize,
        /// Untimed warmup passes per decoder.
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Input generator seed.
        #[arg(long, default_value_t = 0x5EED)]
        seed: u64,
        /// Append rows to this CSV file (header written if new).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write an SVG throughput chart to this path.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Inspect the canonical code table.
    Codebook {
        #[command(subcommand)]
        action: CodebookAction,
    },
    /// Print the decoder cost model.
    Model {
        /// Fraction of end-to-end runtime spent in dequantization.
        #[arg(long, default_value_t = 0.295)]
        overhead_fraction: f64,
        /// Kernel-level speedup of the staged decoder.
        #[arg(long, default_value_t = 2.19)]
        kernel_speedup: f64,
    },
}

#[derive(Subcommand)]
enum CodebookAction {
    /// Print the 16 code values, index-prefixed, full precision.
    Dump,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DecoderArg {
    Tree,
    #[value(alias = "lut")]
    DirectLut,
}

impl From<DecoderArg> for DecoderKind {
    fn from(arg: DecoderArg) -> Self {
        match arg {
            DecoderArg::Tree => DecoderKind::Tree,
            DecoderArg::DirectLut => DecoderKind::DirectLut,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BenchDecoderArg {
    Tree,
    #[value(alias = "lut")]
    DirectLut,
    Both,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage error.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nf4kit: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::Quantize {
            input,
            output,
            count,
        } => cmd_quantize(&input, &output, count),
        Command::Dequantize {
            input,
            output,
            decoder,
            workers,
            tile,
            f16,
        } => cmd_dequantize(&input, &output, decoder.into(), workers, tile, f16),
        Command::Verify { input } => cmd_verify(&input),
        Command::Bench {
            n,
            decoder,
            workers,
            passes,
            warmup,
            seed,
            csv,
            plot,
        } => cmd_bench(n, decoder, workers, passes, warmup, seed, csv, plot),
        Command::Codebook { action } => match action {
            CodebookAction::Dump => {
                let mut stdout = io::stdout().lock();
                for (i, v) in canonical_nf4().values().iter().enumerate() {
                    writeln!(stdout, "{i:>2}  {v}")?;
                }
                Ok(())
            }
        },
        Command::Model {
            overhead_fraction,
            kernel_speedup,
        } => cmd_model(overhead_fraction, kernel_speedup),
    }
}

fn read_input(path: &Path) -> io::Result<Vec<u8>> {
    if path.as_os_str() == "-" {
        let mut bytes = Vec::new();
        io::stdin().lock().read_to_end(&mut bytes)?;
        Ok(bytes)
    } else {
        fs::read(path)
    }
}

fn write_output(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if path.as_os_str() == "-" {
        io::stdout().lock().write_all(bytes)
    } else {
        fs::write(path, bytes)
    }
}

fn cmd_quantize(
    input: &Path,
    output: &Path,
    count: Option<usize>,
) -> Result<(), Box<dyn Error>> {
    let bytes = read_input(input)?;
    let n = match count {
        Some(n) => {
            if bytes.len() < 4 * n {
                return Err(format!(
                    "input holds {} bytes, fewer than the {} needed for {n} f32 values",
                    bytes.len(),
                    4 * n
                )
                .into());
            }
            n
        }
        None => {
            if bytes.len() % 4 != 0 {
                return Err(format!(
                    "input size {} is not a multiple of 4; pass --count to take a prefix",
                    bytes.len()
                )
                .into());
            }
            bytes.len() / 4
        }
    };
    let values: Vec<f32> = bytes[..4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let qt = quantize_blockwise(&values, canonical_nf4())?;
    let mut container = Vec::new();
    let written = write_container(&qt, &mut container)?;
    write_output(output, &container)?;
    eprintln!(
        "quantized {} elements into {} blocks, {written} bytes",
        qt.n(),
        qt.absmax().len()
    );
    Ok(())
}

/// Derives a full execution config from the CLI's single `--tile` knob:
/// tiles divisible by 8 decode 8 elements per lane, other even tiles fall
/// back to 2 per lane. Odd tiles are rejected downstream.
fn exec_config(tile: usize, workers: usize, f16: bool) -> ExecConfig {
    let (lanes, elems_per_lane) = if tile >= 8 && tile % 8 == 0 {
        (tile / 8, 8)
    } else if tile >= 2 && tile % 2 == 0 {
        (tile / 2, 2)
    } else {
        (tile.max(1), 1)
    };
    ExecConfig {
        tile_elems: tile,
        lanes,
        elems_per_lane,
        workers,
        output_precision: if f16 {
            OutputPrecision::Float16
        } else {
            OutputPrecision::Float32
        },
    }
}

fn cmd_dequantize(
    input: &Path,
    output: &Path,
    decoder: DecoderKind,
    workers: usize,
    tile: usize,
    f16: bool,
) -> Result<(), Box<dyn Error>> {
    let bytes = read_input(input)?;
    let mut reader = bytes.as_slice();
    let qt = read_container(&mut reader)?;
    if !reader.is_empty() {
        return Err(format!("corrupt: {} trailing bytes after container", reader.len()).into());
    }
    let config = exec_config(tile, workers, f16);
    let out = dequantize_blockwise(&qt, decoder, &config, canonical_nf4())?;
    write_output(output, &out.to_le_bytes())?;
    eprintln!(
        "decoded {} elements ({}, {})",
        out.len(),
        decoder.name(),
        if f16 { "f16" } else { "f32" }
    );
    Ok(())
}

fn cmd_verify(input: &Path) -> Result<(), Box<dyn Error>> {
    let bytes = read_input(input)?;
    let mut reader = bytes.as_slice();
    let qt = read_container(&mut reader)?;
    if !reader.is_empty() {
        return Err(format!("corrupt: {} trailing bytes after container", reader.len()).into());
    }
    if qt.codebook_id() != canonical_nf4().id() {
        return Err(format!(
            "unknown codebook id {:?}; cannot cross-check decoders",
            qt.codebook_id()
        )
        .into());
    }
    for precision in [OutputPrecision::Float32, OutputPrecision::Float16] {
        let config = ExecConfig {
            output_precision: precision,
            ..Default::default()
        };
        let tree = dequantize_blockwise(&qt, DecoderKind::Tree, &config, canonical_nf4())?;
        let lut = dequantize_blockwise(&qt, DecoderKind::DirectLut, &config, canonical_nf4())?;
        if tree.to_le_bytes() != lut.to_le_bytes() {
            return Err("decoder outputs disagree on this payload".into());
        }
    }
    println!(
        "ok: {} elements, {} blocks, codebook {}, crc ok, decoders equivalent",
        qt.n(),
        qt.absmax().len(),
        qt.codebook_id()
    );
    Ok(())
}

fn report_line(report: &BenchReport) -> String {
    format!(
        "{:<11} n={:<10} workers={:<3} mean={:.6}s  {:>10.3} Melem/s  {:>8.1} MB/s  {:#010x}",
        report.spec.decoder.name(),
        report.spec.n_elements,
        report.spec.workers,
        report.mean_seconds,
        report.elements_per_second / 1e6,
        report.input_bytes_per_second / 1e6,
        report.checksum
    )
}

fn append_csv(path: &Path, reports: &[&BenchReport]) -> io::Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "{}", bench::csv_header())?;
    }
    for report in reports {
        writeln!(file, "{}", bench::csv_row(report))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    n: usize,
    decoder: BenchDecoderArg,
    workers: usize,
    passes: usize,
    warmup: usize,
    seed: u64,
    csv: Option<PathBuf>,
    plot: Option<PathBuf>,
) -> Result<(), Box<dyn Error>> {
    let mut stdout = io::stdout().lock();
    let reports: Vec<BenchReport> = match decoder {
        BenchDecoderArg::Both => {
            eprintln!("benchmarking both decoders: n={n}, workers={workers}, seed={seed}");
            let cmp = bench::compare_decoders(n, workers, seed, warmup, passes)?;
            writeln!(stdout, "{}", report_line(&cmp.tree))?;
            writeln!(stdout, "{}", report_line(&cmp.direct_lut))?;
            writeln!(
                stdout,
                "speedup (tree mean / direct_lut mean): {:.3}x",
                cmp.speedup_ratio
            )?;
            vec![cmp.tree, cmp.direct_lut]
        }
        single => {
            let kind = match single {
                BenchDecoderArg::Tree => DecoderKind::Tree,
                BenchDecoderArg::DirectLut => DecoderKind::DirectLut,
                BenchDecoderArg::Both => unreachable!(),
            };
            eprintln!("benchmarking {}: n={n}, workers={workers}, seed={seed}", kind.name());
            let mut spec = BenchSpec::new(n, kind, workers, seed);
            spec.warmup_passes = warmup;
            spec.measured_passes = passes;
            let report = bench::run_bench(&spec)?;
            writeln!(stdout, "{}", report_line(&report))?;
            vec![report]
        }
    };
    if let Some(path) = csv {
        append_csv(&path, &reports.iter().collect::<Vec<_>>())?;
        eprintln!("appended {} row(s) to {}", reports.len(), path.display());
    }
    if let Some(path) = plot {
        fs::write(&path, bench::render_svg(&reports))?;
        eprintln!("wrote plot to {}", path.display());
    }
    Ok(())
}

fn cmd_model(overhead_fraction: f64, kernel_speedup: f64) -> Result<(), Box<dyn Error>> {
    let geometry = KernelGeometry::default();
    let costs = CycleCosts::default();
    let instrs = InstrCounts::default();
    let traffic = lut_traffic(&geometry)?;
    let instr = instruction_reduction(&instrs)?;
    let latency = latency_advantage(&costs)?;
    let projection = amdahl_projection(overhead_fraction, kernel_speedup)?;

    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "lut traffic per block:   baseline {} B, staged {} B, ratio {:.1}x",
        traffic.baseline_bytes, traffic.optimized_bytes, traffic.ratio
    )?;
    writeln!(
        stdout,
        "instructions per weight: baseline {}, optimized {}, reduction {:.1}%",
        instr.baseline,
        instr.optimized,
        instr.reduction * 100.0
    )?;
    writeln!(
        stdout,
        "latency advantage:       {:.2}x vs shared read ({} / {} cycles), {:.2}x vs shared write ({} / {} cycles)",
        latency.read_ratio,
        costs.global_access,
        costs.shared_read,
        latency.write_ratio,
        costs.global_access,
        costs.shared_write
    )?;
    writeln!(
        stdout,
        "end-to-end projection:   {projection:.3}x at overhead fraction {overhead_fraction}, kernel speedup {kernel_speedup}x",
    )?;
    Ok(())
}
