//! Encode-side throughput: blockwise quantization of a 1M-element seeded
//! normal tensor, plus the container writer on the result.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use nf4kit::bench::standard_normal_tensor;
use nf4kit::{canonical_nf4, quantize_blockwise, write_container};

const N: usize = 1 << 20;
const SEED: u64 = 0x5EED;

fn quantize_throughput(c: &mut Criterion) {
    let values = standard_normal_tensor(N, SEED).unwrap();
    let codebook = canonical_nf4();
    let mut group = c.benchmark_group("quantize_1m");
    group.throughput(Throughput::Elements(N as u64));
    group.sample_size(20);
    group.bench_function("blockwise", |b| {
        b.iter(|| quantize_blockwise(&values, codebook).unwrap());
    });
    group.finish();
}

fn container_write(c: &mut Criterion) {
    let values = standard_normal_tensor(N, SEED).unwrap();
    let qt = quantize_blockwise(&values, canonical_nf4()).unwrap();
    let mut group = c.benchmark_group("container_1m");
    group.throughput(Throughput::Bytes(
        (qt.packed().len() + 4 * qt.absmax().len()) as u64,
    ));
    group.sample_size(20);
    group.bench_function("write", |b| {
        let mut sink = Vec::with_capacity(qt.packed().len() + 4 * qt.absmax().len() + 64);
        b.iter(|| {
            sink.clear();
            write_container(&qt, &mut sink).unwrap()
        });
    });
    group.finish();
}

criterion_group!(benches, quantize_throughput, container_write);
criterion_main!(benches);
