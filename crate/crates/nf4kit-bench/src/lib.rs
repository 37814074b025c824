//! Criterion harness crate; the measurements live under `benches/`. Run
//! them with `cargo bench -p nf4kit-bench`. For the protocol-pinned
//! measurements (seeded input, fixed pass counts, CSV output) use the
//! `nf4kit bench` subcommand instead.
