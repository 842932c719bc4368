pub mod crossval;
pub mod error;
pub mod linalg;
pub mod model;
pub mod regularization;
pub mod select;
pub mod spline;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector, RowDVector};
