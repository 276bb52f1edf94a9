//! Criterion benchmarks for the hot paths of `volcount-core`; see `benches/`.
