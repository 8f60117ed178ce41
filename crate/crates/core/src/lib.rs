//! Allocation-only core of the gland segmentation toolkit.
//!
//! Everything here is pure computation over in-memory buffers: a small
//! NCHW tensor type with a reverse-mode tape, the three convolutional block
//! families, the U-Net assembly, categorical Dice loss and Dice Index
//! metrics, the NADAM optimizer with its training loop, and the raster
//! transforms used by the data pipeline. File formats and the CLI live in
//! the `glandseg` crate.
//!
//! The crate builds without `std` (it needs `alloc`); the default `std`
//! feature only enables runtime SIMD detection in the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod folds;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod unet;

pub use autodiff::{Tape, Var};
pub use blocks::{BlockKind, BlockParams, Conv};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use unet::{UNetConfig, UNetModel};
