//! Criterion benchmarks for the samplers; see `benches/samplers.rs`.
