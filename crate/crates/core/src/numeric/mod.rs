//! Dense linear algebra, capsule nonlinearities, Adam and finite-difference checks.

pub mod adam;
pub mod container;
pub mod gradcheck;
pub mod matrix;
pub mod ops;

pub use adam::{AdamConfig, ParamSlot};
pub use container::Container;
pub use gradcheck::{check_gradient, GradCheckConfig, GradCheckReport};
pub use matrix::{axpy, cosine, dot, norm, DenseMatrix};
pub use ops::{softmax, softmax_backward, squash, squash_backward, SQUASH_EPS};
