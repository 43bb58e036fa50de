//! Instance-association engine: self-supervised correspondence from augmented
//! view pairs, a contrastive embedding head, deformable multi-level feature
//! kernels, and an online bi-softmax tracker with identity metrics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! parsing and the command-line front end live in the `instassoc` crate.
#![no_std]
#![deny(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod embed;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod kernels;
pub mod math;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::BBox;
