//! Criterion benchmarks for the dense kernels; see `benches/`.
