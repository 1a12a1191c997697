//! Criterion benchmarks for the rubricnet pipeline; see `benches/`.
