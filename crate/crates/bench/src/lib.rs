//! Criterion benchmarks for the citefield core; see `benches/`.
