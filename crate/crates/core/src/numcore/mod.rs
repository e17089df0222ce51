//! Dense 64-bit matrices, the layers the feature extractor needs, and
//! reverse-mode gradients for them.

pub mod checkpoint;
pub mod gradcheck;
mod matrix;
mod param;
mod tape;

pub use matrix::{NormStats, TokenMatrix};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{Tape, Var};
