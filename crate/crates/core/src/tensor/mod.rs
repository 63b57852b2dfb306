//! Dense `f64` tensors, reverse-mode differentiation, seeded randomness and
//! multiply-accumulate accounting.

mod dense;
pub mod gradcheck;
mod macs;
mod rng;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{finite_diff_check, GradCheckReport, GroupError};
pub use macs::MacCounter;
pub use rng::Rng;
pub(crate) use tape::softmax_in_place;
pub use tape::{Gradients, Tape, Var};
