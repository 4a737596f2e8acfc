//! Criterion benchmarks for the bnne kernels; see `benches/kernels.rs`.
