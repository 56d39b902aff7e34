//! Multi-task 3D networks for MRI-to-PET cerebral blood flow translation and
//! cerebrovascular disease classification, built on a small reverse-mode
//! autodiff engine.

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod label;
pub mod losses;
pub mod networks;
pub mod tensor;
pub mod trainer;

pub use autodiff::{grad_check, ConvGeometry, Gradients, Tape, Var};
pub use error::{Error, ErrorCategory, Result};
pub use label::ClassLabel;
pub use tensor::{Scalar, Tensor};
