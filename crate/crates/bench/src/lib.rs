//! Criterion benchmarks for the SVD, plant stepping and MPC solve paths; see `benches/`.
