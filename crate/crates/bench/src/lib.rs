//! Criterion benchmarks for the training and preprocessing hot paths; see
//! `benches/`.
