//! Core of the calc2 loop-closure toolkit.
//!
//! Everything here is pure computation over in-memory values: a small
//! reverse-mode autodiff library, the encoder/decoder network, its training
//! objectives, the residual-aggregated global descriptor, convolutional
//! keypoints, fundamental-matrix RANSAC and the loop-closure database.
//! File formats and the command line live in the `calc2` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

#[cfg(any(feature = "std", test))]
extern crate std;

pub mod augment;
pub mod descriptor;
mod error;
pub mod eval;
pub mod geometry;
pub mod keypoints;
pub mod loopdb;
pub mod losses;
pub mod math;
pub mod ndgrad;
pub mod net;
pub mod pipeline;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
pub use math::Real;
pub use ndgrad::{Tape, Tensor, Var};
