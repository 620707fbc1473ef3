//! Core of the RetiFluidNet retinal-fluid segmentation network.
//!
//! Everything here is pure computation over in-memory tensors and runs under
//! `no_std` with `alloc`. File formats, the command line and anything touching
//! the filesystem live in the companion `retifluid` crate.
#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod connectivity;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod losses;
mod math;
pub mod model;
pub mod ops;
pub mod params;
pub mod sda;
pub mod tensor;
pub mod train;

pub use autodiff::{Function, Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
