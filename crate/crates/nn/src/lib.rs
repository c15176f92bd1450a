//! Small CPU neural-network toolkit: stride-1 "same" convolutions in 2D and
//! 3D, batch normalization, pooling/upsampling, dropout, MSE, Adam, a
//! finite-difference gradient checker and a flat checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod scalar;
pub mod sequential;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{Layer, Mode, Param};
pub use loss::mse_loss;
pub use scalar::Scalar;
pub use sequential::Sequential;
pub use tensor::Tensor;
