//! Correlated-noise engine and memory-tier performance models for private
//! training workloads.
//!
//! Private training with cross-iteration noise correlation keeps the last
//! `band - 1` noise vectors and mixes them into each fresh Gaussian. This
//! crate provides:
//!
//! * deterministic, counter-based noise generation and the banded mixing
//!   recursion ([`noise`], [`mixing`]), with a regenerate-from-seed oracle;
//! * placement of the noise history across GPU/main/CXL memory
//!   ([`placement`]);
//! * replayable access traces ([`trace`]) and the pre-compute/coalesce
//!   pipeline for sparsely accessed embedding tables ([`emb`], [`store`]);
//! * a toy training loop certifying that the lazy coalesced path matches
//!   eager full-noise training ([`trainer`]);
//! * an analytic latency model of the execution strategies ([`sim`]).

pub mod dtype;
pub mod emb;
pub mod error;
pub mod mixing;
pub mod noise;
pub mod placement;
pub mod rng;
pub mod sim;
pub mod store;
pub mod trace;
pub mod trainer;

pub use dtype::Dtype;
pub use error::{Error, Result};
