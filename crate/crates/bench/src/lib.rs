//! Criterion benchmarks for the inversion algorithms; see `benches/`.
