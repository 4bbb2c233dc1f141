pub mod algebra;
pub mod audit;
pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use algebra::{kron, AlgVec, AlgebraTensor, BuiltinAlgebra};
pub use error::{Error, Result};
pub use scalar::{Precision, Real};
pub use tensor::Tensor;
