pub mod arch;
pub mod conv;
pub mod error;
pub mod fd;
pub mod nn;
pub mod scalar;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{ComplexTensor, RealTensor, Shape, Tensor};
