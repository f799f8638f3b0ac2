//! Gamma network codes.
//!
//! Source packets pass through a rate-(1-δ) erasure pre-code, then a rate-R
//! random linear outer code whose checks tie several generations together,
//! and finally generation-based random linear network coding. The decoder
//! alternates per-generation elimination with check releases and finishes
//! with pre-code decoding.
//!
//! Besides the codec, the crate contains the asymptotic overhead analysis,
//! a degree-distribution optimizer, and a Monte Carlo harness.

pub mod analysis;
pub mod error;
pub mod gf;
pub mod optimizer;
pub mod outercode;
pub mod pipeline;
pub mod precode;
pub mod rng;
pub mod sim;
pub mod srlnc;

pub use error::{Error, Result};
