//! Core of a stereo-aware transformer 3D object detector.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! without `std`: dense tensors with reverse-mode differentiation, the
//! two-view backbone, the stereo-preserving cost-volume pyramid, the
//! disparity head, the deformable transformer decoder, detection heads and
//! losses, rotated-box metrics, and a synthetic pinhole-stereo renderer.
//! File formats, configuration files and the command line live in the `ts3d`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod config;
pub mod decoder;
pub mod detect;
pub mod disphead;
mod error;
pub mod eval;
pub mod gradsuite;
pub mod label;
pub mod model;
pub mod nn;
pub mod spfpn;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Graph, ParamId, ParamStore, Tensor, Var};
