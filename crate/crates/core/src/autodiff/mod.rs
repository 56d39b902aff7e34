//! Tensor arithmetic with reverse-mode automatic differentiation.

pub mod conv;
pub mod gradcheck;
pub mod suite;
mod pool;
pub mod tape;

pub use conv::ConvGeometry;
pub use gradcheck::grad_check;
pub(crate) use tape::SsimParts;
pub use tape::{Gradients, Tape, Var};
