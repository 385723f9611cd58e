//! Hierarchical prompt routing for lifelong learning.
//!
//! The crate is `no_std` (with `alloc`) and holds the numerical core:
//!
//! - [`vectorspace`]: frozen query encoder and cosine distance.
//! - [`keyspace`]: task and meta prompt keys, their metric-learning losses,
//!   nearest-key routing and adaptive decision boundaries.
//! - [`memory`]: replay buffer with key-driven sample selection and k-means
//!   clustering of memory queries.
//! - [`composer`]: prompt store, scheduled sampling of task identities and
//!   train/inference prompt composition.
//! - [`learner`]: prompt-conditioned surrogate classifier and the full
//!   sequential training loop.
//! - [`streams`]: synthetic Gaussian-mixture task streams.
//! - [`metrics`]: lifelong-learning metrics, key-space diagnostics and
//!   task-identity detection scores.
//!
//! IO, file formats and the experiment CLI live in the `diana-cli` crate.
#![no_std]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod composer;
mod error;
pub mod keyspace;
pub mod learner;
pub(crate) mod linalg;
pub mod memory;
pub mod metrics;
pub mod streams;
pub mod vectorspace;

pub use error::{Error, Result};
