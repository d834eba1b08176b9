//! Criterion benchmarks for the solver pipeline. See `benches/`.
