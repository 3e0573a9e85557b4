//! Numerical core for isotropic-Gaussian embedding regularization: dense
//! linear algebra, a small reverse-mode autodiff tape, the sketched
//! characteristic-function regularizer, tracking-error simulation,
//! representation diagnostics, and a non-stationary training harness.

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod rng;
pub mod sigreg;
pub mod table;
pub mod tracking;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use rng::{Distribution, Rng};
