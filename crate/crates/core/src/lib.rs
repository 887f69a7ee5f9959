//! Isotropic and diagonal Gaussian mixture estimation together with explicit
//! transformer weight constructions that execute the same algorithms.
//!
//! The crate is organised bottom-up:
//!
//! * [`params`]: mixture parameters, densities and validation.
//! * [`sampler`]: synthetic task generation.
//! * [`em`]: reference expectation-maximization.
//! * [`spectral`]: method of moments with robust tensor power iteration.
//! * [`transformer`]: a plain forward-pass engine (attention, MLP, readout).
//! * [`constructions`]: weight compilers that turn EM and tensor power
//!   iteration into [`transformer::TfWeights`].
//! * [`metrics`]: permutation-aligned scoring.
//! * [`harness`]: benchmark suites and construction verification.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constructions;
pub mod em;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod params;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod tensor;
pub mod transformer;

pub use error::{Error, Result};
pub use params::{GmmParams, Task, Violation};
pub use tensor::SymTensor3;
