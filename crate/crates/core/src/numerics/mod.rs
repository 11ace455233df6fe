//! Dense/sparse arithmetic, reverse-mode differentiation, batch
//! normalisation, and Adam. Everything runs in `f64`.

pub mod adam;
pub mod batchnorm;
pub mod dense;
pub mod gradcheck;
pub mod sparse;
pub mod tape;

pub use adam::AdamState;
pub use batchnorm::{BatchNormMode, BatchNormState};
pub use dense::DenseMatrix;
pub use gradcheck::{grad_check, GradCheck};
pub use sparse::SparseMatrix;
pub use tape::{log_sigmoid, sigmoid, softmax_into, BatchStats, Gradients, SparseOperand, Tape, Var};
