pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod factorization;
pub mod io;
pub mod protocol;
pub mod rng;
pub mod tensor;

#[cfg(test)]
mod test_util;

pub use error::{Error, Result};
pub use tensor::{Complex, ComplexMatrix, Tensor3};
