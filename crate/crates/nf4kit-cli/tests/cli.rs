//! End-to-end tests of the `nf4kit` binary: exit codes, stream handling,
//! and the quantize → verify → dequantize workflow.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nf4kit")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn nf4kit")
}

fn run_with_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = Command::new(bin())
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn nf4kit");
    child
        .stdin
        .take()
        .expect("stdin")
        .write_all(input)
        .expect("write stdin");
    child.wait_with_output().expect("wait")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn sample_values(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| ((i as f32) * 0.739).sin() * 4.2 + ((i % 7) as f32) * 0.31)
        .collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn quantize_verify_dequantize_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.f32");
    let container = dir.path().join("t.nf4");
    let output = dir.path().join("out.f32");
    let values = sample_values(333);
    std::fs::write(&input, f32s_to_bytes(&values)).unwrap();

    let q = run(&["quantize", path_str(&input), path_str(&container)]);
    assert_eq!(q.status.code(), Some(0), "stderr: {}", stderr_str(&q));

    let v = run(&["verify", path_str(&container)]);
    assert_eq!(v.status.code(), Some(0), "stderr: {}", stderr_str(&v));
    let summary = stdout_str(&v);
    assert!(summary.starts_with("ok:"), "summary: {summary}");
    assert!(summary.contains("333 elements"));
    assert!(summary.contains("decoders equivalent"));

    let d = run(&[
        "dequantize",
        path_str(&container),
        path_str(&output),
        "--decoder",
        "tree",
    ]);
    assert_eq!(d.status.code(), Some(0), "stderr: {}", stderr_str(&d));

    let decoded = bytes_to_f32s(&std::fs::read(&output).unwrap());
    assert_eq!(decoded.len(), values.len());
    // Per-block roundtrip bound: half the widest code gap times absmax.
    for (block_idx, block) in values.chunks(64).enumerate() {
        let absmax = block.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let bound = 0.152f64 * absmax as f64 + 1e-6;
        for (j, (&x, &xhat)) in block
            .iter()
            .zip(decoded[block_idx * 64..].iter())
            .enumerate()
        {
            let err = (x as f64 - xhat as f64).abs();
            assert!(err <= bound, "block {block_idx} elem {j}: {err} > {bound}");
        }
    }
}

#[test]
fn streams_work_as_stdin_stdout() {
    let values = sample_values(130);
    let q = run_with_stdin(&["quantize", "-", "-"], &f32s_to_bytes(&values));
    assert_eq!(q.status.code(), Some(0), "stderr: {}", stderr_str(&q));
    assert_eq!(&q.stdout[0..4], b"NF4K");

    let d = run_with_stdin(&["dequantize", "-", "-"], &q.stdout);
    assert_eq!(d.status.code(), Some(0), "stderr: {}", stderr_str(&d));
    assert_eq!(d.stdout.len(), 4 * 130);

    // f16 output halves the byte count.
    let h = run_with_stdin(&["dequantize", "-", "-", "--f16"], &q.stdout);
    assert_eq!(h.status.code(), Some(0));
    assert_eq!(h.stdout.len(), 2 * 130);
}

#[test]
fn usage_errors_exit_1() {
    let out = run(&["dequantize", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_str(&out).contains("Usage") || stderr_str(&out).contains("error"));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_str(&out).contains("quantize"));

    let out = run(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();

    // Not a container at all.
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"definitely not a container").unwrap();
    let out = run(&["verify", path_str(&junk)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("not an NF4K file"));

    // A real container with a flipped payload bit.
    let input = dir.path().join("in.f32");
    let container = dir.path().join("t.nf4");
    std::fs::write(&input, f32s_to_bytes(&sample_values(100))).unwrap();
    let q = run(&["quantize", path_str(&input), path_str(&container)]);
    assert_eq!(q.status.code(), Some(0));
    let mut bytes = std::fs::read(&container).unwrap();
    let mid = bytes.len() - 10;
    bytes[mid] ^= 0x40;
    let corrupt = dir.path().join("corrupt.nf4");
    std::fs::write(&corrupt, &bytes).unwrap();
    let out = run(&["verify", path_str(&corrupt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("corrupt"), "stderr: {}", stderr_str(&out));

    // Truncated container.
    let trunc = dir.path().join("trunc.nf4");
    std::fs::write(&trunc, &std::fs::read(&container).unwrap()[..20]).unwrap();
    let out = run(&["dequantize", path_str(&trunc), "-"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("truncated"));

    // Raw input not a multiple of four bytes.
    let ragged = dir.path().join("ragged.bin");
    std::fs::write(&ragged, [1u8, 2, 3, 4, 5]).unwrap();
    let out = run(&["quantize", path_str(&ragged), "-"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("multiple of 4"));

    // Missing input file.
    let out = run(&["verify", path_str(&dir.path().join("nope.nf4"))]);
    assert_eq!(out.status.code(), Some(2));

    // Invalid tile geometry.
    let out = run(&[
        "dequantize",
        path_str(&container),
        "-",
        "--tile",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("invalid config"));
}

#[test]
fn quantize_count_prefix() {
    // 6 floats in the stream, take 5 (odd count exercises the pad nibble).
    let values = sample_values(6);
    let out = run_with_stdin(&["quantize", "-", "-", "--count", "5"], &f32s_to_bytes(&values));
    assert_eq!(out.status.code(), Some(0));
    let d = run_with_stdin(&["dequantize", "-", "-"], &out.stdout);
    assert_eq!(d.stdout.len(), 4 * 5);

    // Asking for more than the stream holds is a data error.
    let out = run_with_stdin(&["quantize", "-", "-", "--count", "7"], &f32s_to_bytes(&values));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("fewer"));
}

#[test]
fn codebook_dump_prints_the_table() {
    let out = run(&["codebook", "dump"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_str(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 16);
    assert!(lines[0].starts_with(" 0") && lines[0].contains("-1"));
    assert!(lines[7].contains('7') && lines[7].contains('0'));
    assert!(lines[15].contains("15") && lines[15].contains('1'));
    // Values parse back as f32 and are strictly increasing.
    let parsed: Vec<f32> = lines
        .iter()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(parsed.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(parsed[0], -1.0);
    assert_eq!(parsed[15], 1.0);
}

#[test]
fn model_prints_cost_table() {
    let out = run(&["model"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_str(&out);
    assert!(text.contains("baseline 4096 B"));
    assert!(text.contains("ratio 64.0x"));
    assert!(text.contains("reduction 71.4%"));
    assert!(text.contains("12.61x"));
    assert!(text.contains("15.26x"));
    assert!(text.contains("1.191x"));

    let out = run(&["model", "--overhead-fraction", "0.5", "--kernel-speedup", "2"]);
    assert!(stdout_str(&out).contains("1.333x"));

    // Domain errors are data errors.
    let out = run(&["model", "--overhead-fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_reports_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let plot = dir.path().join("bench.svg");
    let out = run(&[
        "bench",
        "--n",
        "20000",
        "--passes",
        "2",
        "--warmup",
        "1",
        "--seed",
        "7",
        "--csv",
        path_str(&csv),
        "--plot",
        path_str(&plot),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.contains("tree"));
    assert!(text.contains("direct_lut"));
    assert!(text.contains("speedup"));

    let csv_text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = csv_text.lines().collect();
    assert_eq!(lines.len(), 3, "header + one row per decoder");
    assert!(lines[0].starts_with("decoder,n_elements"));
    assert!(lines[1].starts_with("tree,20000,"));
    assert!(lines[2].starts_with("direct_lut,20000,"));

    // Appending to an existing CSV adds rows without a second header.
    let out = run(&[
        "bench", "--n", "4096", "--decoder", "lut", "--passes", "1", "--csv",
        path_str(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv_text.lines().count(), 4);
    assert_eq!(csv_text.matches("decoder,n_elements").count(), 1);

    let svg = std::fs::read_to_string(&plot).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("direct_lut"));
}

#[test]
fn bench_rejects_zero_elements() {
    let out = run(&["bench", "--n", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("at least 1"));
}
