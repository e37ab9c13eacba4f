//! Dense numeric kernel: matrices, a CSR propagation operator, primitive
//! layers with analytic gradients, flat parameter vectors and Adam.

mod adam;
pub mod gradcheck;
pub mod layers;
mod matrix;
mod params;
mod sparse;

pub use adam::{adam_step, AdamState};
pub use matrix::{dot, Matrix};
pub use params::{ParamVector, Slot};
pub use sparse::SparseMatrix;
