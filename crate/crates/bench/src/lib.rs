//! Criterion benchmarks for the harness kernels and scoring; see `benches/`.
