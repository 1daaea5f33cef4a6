//! Benchmarks for the `avgpred` numerics live in `benches/`; this crate has
//! no library code of its own.
