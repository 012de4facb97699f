//! Benchmarks for the simulator; see `benches/`.
