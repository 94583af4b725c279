//! Quantized GEMV kernels (Q4 weights, Q8 activations), a deterministic
//! row-partitioned executor with NUMA placement policies, a synthetic
//! decoder workload, and the benchmark harness behind `qbench`.

pub mod bench;
pub mod error;
pub mod kernels;
pub mod oracle;
pub mod parallel;
pub mod qmat;
pub mod quant;
pub mod synth;
pub mod toymodel;

pub use error::{Error, Result};
