//! Criterion benchmarks; see `benches/core.rs`.
