//! Dense tensors, reverse-mode differentiation, seeded sampling and Adam.

mod adam;
mod autodiff;
mod kernels;
mod params;
mod rng;
mod value;

pub use adam::Adam;
pub use autodiff::{Gradients, Tape, Var};
pub use params::{Bound, ParamId, ParamStore};
pub use rng::Rng;
pub use value::Tensor;

