//! Discrete-time spiking network engine for task-agnostic continual learning.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation over in-memory data: neuron dynamics, synapse-local learning
//! rules, the layered network, spike encoders, task construction, the
//! continual-learning metrics and the training/evaluation protocol. File
//! formats, configuration and the command line live in the `snncl` crate.
//!
//! The `std` feature swaps the portable exponential used by the plasticity
//! factor for the platform one. Results can then differ in the last bit
//! between the two builds.
//!
//! Learning is error-driven random backpropagation (spiking error neurons
//! broadcast through fixed random feedback weights). Each synapse carries a
//! reference weight that slowly tracks the weight and a metaplastic state
//! that grows with sustained pre/post activity and shrinks plasticity as
//! `exp(-|m w|)`.

#![no_std]
#![deny(missing_docs)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod dataset;
pub mod encoding;
mod error;
pub mod experiment;
pub mod metrics;
pub mod network;
pub mod neuron;
pub mod plasticity;
pub mod seed;

pub use error::{Error, Result};
