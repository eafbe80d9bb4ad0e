//! Library side of the benchmark driver: configuration, the benchmark
//! problems, and the offline/online orchestration used by the binary and
//! by the acceptance suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cases;
pub mod config;
