pub mod aphynity;
pub mod augmentation;
pub mod checkpoint;
pub mod cli;
pub mod container;
pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod hybrid;
pub mod hvae;
pub mod integrators;
pub mod neural;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
