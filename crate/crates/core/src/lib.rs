//! Heterogeneous-kernel convolution (HetConv).
//!
//! A HetConv filter mixes kernel sizes across its input channels: with part
//! `P`, one in `P` channels gets a full `K×K` kernel and the rest get a
//! center-aligned `1×1` kernel. This crate provides:
//!
//! * [`tensor`]: a small dense NCHW `f64` tensor with a documented seeded RNG
//!   and a binary blob format.
//! * [`conv`]: instrumented forward/backward kernels for standard, HetConv,
//!   depthwise, pointwise and groupwise convolution, plus the
//!   masked-dense embedding used as an oracle.
//! * [`cost`]: closed-form MAC/parameter counts and exact reduction ratios.
//! * [`arch`]: declarative architectures, builtin networks, the HetConv
//!   rewriter, cost reports, latency analysis and a line-oriented JSON config
//!   format.
//! * [`train`]: a desk-scale SGD loop over a procedural dataset that compares
//!   a standard network with its HetConv twin.
//! * [`verify`] and [`bench`]: property suites and a microbenchmark harness
//!   driven by the CLI.

pub mod arch;
pub mod bench;
pub mod conv;
pub mod cost;
mod error;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Dims4, Rng, Tensor4};
