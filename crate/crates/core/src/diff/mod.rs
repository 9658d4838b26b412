//! Minimal reverse-mode differentiation and optimization substrate.

mod adam;
pub mod gradcheck;
mod kernels;
pub mod ops;
mod params;
pub mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{check_gradients, grad_check, GradCheckOptions, GradCheckReport};
pub use params::{seeded_init, AdamState, Init, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use kernels::two_class_nll;
