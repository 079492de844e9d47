pub mod algebra;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
