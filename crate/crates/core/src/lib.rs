//! Core of a bandwidth-aware collaborative perception pipeline.
//!
//! Everything here is `no_std` + `alloc`: the tensor/autodiff engine, the toy
//! encoder/decoder, self/mutual information matching, related-feature fusion,
//! the synthetic multi-view world, protocol framing and byte accounting, the
//! optimizer and the evaluation metrics. File IO, threading and the CLI live in
//! the `dcpnet` crate.

#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod metrics;
pub mod model;
pub mod net;
pub mod optim;
pub mod params;
pub mod protocol;
pub mod rff;
pub mod scene;
pub mod smim;
pub mod tensor;

pub use error::{Error, FormatError};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{ClassMask, Tensor};
